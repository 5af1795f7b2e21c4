"""Agent state and the single gradient update shared by every algorithm."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from factored_rl import kernels
from factored_rl.agents import ops
from factored_rl.decomp import ActionSpec, DecompMode, aggregate, gather
from factored_rl.errors import ConfigError, TrainingDivergence, UnsupportedModeError
from factored_rl.nn import (
    AdamState,
    DecomposedTDLoss,
    ExpectileLoss,
    FactoredNLLLoss,
    GradBundle,
    NetParams,
    adam_step,
    backward,
    clip_global_norm,
    forward,
    init_mlp,
    load_net,
    polyak,
    save_net,
    segment_log_softmax,
)

ALGORITHMS = ("decqn", "bcq", "cql", "iql", "onestep", "bc", "online-decqn")
POLICY_ALGORITHMS = frozenset({"bcq", "iql", "onestep", "bc"})
CRITIC_ALGORITHMS = frozenset(ALGORITHMS) - {"bc"}
# algorithm -> knobs it reads
KNOBS = {
    "bcq": ("bcq_tau",),
    "cql": ("cql_alpha",),
    "iql": ("iql_tau", "iql_lambda"),
    "onestep": ("onestep_lambda",),
}


@dataclass(frozen=True)
class AgentConfig:
    algorithm: str = "decqn"
    decomp: str = "mean"
    gamma: float = 0.99
    target_update_rate: float = 0.005
    learning_rate: float = 3e-4
    batch_size: int = 256
    updates: int = 100_000
    dual_critic: bool = True
    hidden_width: int = 512
    hidden_layers: int = 2
    huber_delta: float = 1.0
    # states are assumed to lie in [input_low, input_high] per coordinate and are
    # mapped affinely to [-1, 1] before entering any network
    normalize_inputs: bool = True
    input_low: float = 0.0
    input_high: float = 1.0
    grad_clip: float | None = None
    bcq_tau: float | None = 0.5
    cql_alpha: float | None = 1.0
    iql_tau: float | None = 0.5
    iql_lambda: float | None = 20.0
    onestep_lambda: float | None = 50.0
    epsilon: float = 0.1
    log_interval: int = 1000
    checkpoint_interval: int = 25_000
    eval_interval: int = 0
    eval_episodes: int = 20
    replay_capacity: int = 100_000
    learning_starts: int = 256

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        try:
            mode = DecompMode(self.decomp)
        except ValueError:
            raise ConfigError(f"unknown decomposition mode {self.decomp!r}") from None
        if mode is DecompMode.INDEPENDENT and self.algorithm in ("iql", "onestep"):
            raise ConfigError(f"{self.algorithm} needs a joint Q and cannot use independent targets")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.target_update_rate <= 1.0:
            raise ConfigError("target_update_rate must lie in (0, 1]")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.updates < 1:
            raise ConfigError("learning_rate, batch_size and updates must be positive")
        if self.hidden_width < 1 or self.hidden_layers < 0:
            raise ConfigError("bad network shape")
        if self.normalize_inputs and not self.input_high > self.input_low:
            raise ConfigError("input_high must exceed input_low")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        for knob in KNOBS.get(self.algorithm, ()):
            if getattr(self, knob) is None:
                raise ConfigError(f"{self.algorithm} requires {knob}")
        if self.algorithm == "bcq" and not 0.0 <= self.bcq_tau <= 1.0:
            raise ConfigError("bcq_tau must lie in [0, 1]")
        if self.algorithm == "cql" and self.cql_alpha < 0:
            raise ConfigError("cql_alpha must be >= 0")
        if self.algorithm == "iql":
            if not 0.0 < self.iql_tau < 1.0:
                raise ConfigError("iql_tau must lie in (0, 1)")
            if self.iql_lambda <= 0:
                raise ConfigError("iql_lambda must be positive")
        if self.algorithm == "onestep" and self.onestep_lambda <= 0:
            raise ConfigError("onestep_lambda must be positive")

    @property
    def mode(self) -> DecompMode:
        return DecompMode(self.decomp)

    def with_(self, **changes) -> "AgentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown agent config keys: {sorted(unknown)}")
        return cls(**d)


class Agent:
    """Networks, optimiser state and RNG for one training run.

    Nets are created from independent child seeds of ``seed`` so that, e.g.,
    adding a policy net does not change the critic initialisation.
    """

    def __init__(self, config: AgentConfig, spec: ActionSpec, obs_dim: int, seed: int = 0):
        self.config = config
        self.spec = spec
        self.obs_dim = obs_dim
        self.seed = seed
        k = spec.total_utilities
        c_seed, c2_seed, pi_seed, v_seed, run_seed = np.random.SeedSequence(seed).spawn(5)
        shape = dict(hidden_width=config.hidden_width, hidden_layers=config.hidden_layers)

        self.critics: list[NetParams] = []
        if config.algorithm in CRITIC_ALGORITHMS:
            seeds = [c_seed, c2_seed] if config.dual_critic else [c_seed]
            self.critics = [init_mlp(obs_dim, k, rng=np.random.default_rng(s), **shape) for s in seeds]
        self.targets = [c.copy() for c in self.critics]
        self.critic_opt = [AdamState.for_params(c) for c in self.critics]

        self.policy: NetParams | None = None
        self.policy_opt: AdamState | None = None
        if config.algorithm in POLICY_ALGORITHMS:
            self.policy = init_mlp(obs_dim, k, rng=np.random.default_rng(pi_seed), **shape)
            self.policy_opt = AdamState.for_params(self.policy)

        self.value: NetParams | None = None
        self.value_opt: AdamState | None = None
        if config.algorithm == "iql":
            self.value = init_mlp(obs_dim, 1, rng=np.random.default_rng(v_seed), **shape)
            self.value_opt = AdamState.for_params(self.value)

        self.rng = np.random.default_rng(run_seed)
        self.updates = 0
        self._grads: dict[int, GradBundle] = {}

    # ----------------------------------------------------------------- queries
    def _inputs(self, states: np.ndarray) -> np.ndarray:
        """Network inputs for raw states (the affine map to [-1, 1] when enabled)."""
        states = np.atleast_2d(states)
        cfg = self.config
        if not cfg.normalize_inputs:
            return states
        return (states - cfg.input_low) * (2.0 / (cfg.input_high - cfg.input_low)) - 1.0

    def _mean_of(self, nets: list[NetParams], states: np.ndarray) -> np.ndarray:
        states = self._inputs(states)
        out = forward(nets[0], states)
        for net in nets[1:]:
            out = out + forward(net, states)
        if len(nets) > 1:
            out /= len(nets)
        return out

    def utilities(self, states: np.ndarray) -> np.ndarray:
        """Mean over online critics, shape ``(B, sum n_i)``."""
        if not self.critics:
            raise UnsupportedModeError(f"{self.config.algorithm} has no utility network")
        return self._mean_of(self.critics, np.atleast_2d(states))

    def target_utilities(self, states: np.ndarray) -> np.ndarray:
        return self._mean_of(self.targets, np.atleast_2d(states))

    def log_policy(self, states: np.ndarray) -> np.ndarray:
        if self.policy is None:
            raise UnsupportedModeError(f"{self.config.algorithm} has no policy network")
        return segment_log_softmax(forward(self.policy, self._inputs(states)), self.spec)

    def state_values(self, states: np.ndarray) -> np.ndarray:
        """V(s) used for advantages: the V net for IQL, E_pi[Q] for OneStep."""
        states = np.atleast_2d(states)
        if self.value is not None:
            return forward(self.value, self._inputs(states))[:, 0]
        if self.config.algorithm == "onestep":
            probs = np.exp(self.log_policy(states))
            return ops.onestep_values_batch(probs, self.utilities(states), self.spec, self.config.mode)
        raise UnsupportedModeError(f"{self.config.algorithm} has no state-value estimate")

    def act_batch(self, states: np.ndarray) -> np.ndarray:
        """Greedy factored actions for a batch of states."""
        cfg, spec = self.config, self.spec
        states = np.atleast_2d(states)
        algo = cfg.algorithm
        if algo == "bc":
            return kernels.segment_argmax(self.log_policy(states), spec.offsets)
        utils = self.utilities(states)
        if algo == "bcq":
            probs = np.exp(self.log_policy(states))
            allowed = ops.bcq_allowed_batch(probs, spec, cfg.bcq_tau)
            return kernels.segment_argmax(np.where(allowed, utils, -np.inf), spec.offsets)
        if algo in ("iql", "onestep"):
            lam = cfg.iql_lambda if algo == "iql" else cfg.onestep_lambda
            log_pi = self.log_policy(states)
            adv = utils - self.state_values(states)[:, None]
            return ops.iql_extract_batch(adv, log_pi, lam, spec)
        return kernels.segment_argmax(utils, spec.offsets)

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self.act_batch(np.asarray(obs, dtype=np.float64)[None, :])[0]

    __call__ = act

    def q_value(self, obs: np.ndarray, action: np.ndarray) -> float:
        """Decomposed Q of one (state, action) pair from the online critics.

        In independent mode every utility estimates Q, so their mean is used.
        """
        utils = self.utilities(np.asarray(obs, dtype=np.float64)[None, :])
        selected = gather(utils, np.asarray(action, dtype=np.int64)[None, :], self.spec)
        mode = self.config.mode
        agg = "mean" if mode is DecompMode.INDEPENDENT else mode
        return float(aggregate(selected, agg)[0])

    # ----------------------------------------------------------------- targets
    def compute_targets(self, batch) -> np.ndarray:
        """Bootstrapped regression targets for the utility nets."""
        cfg, spec = self.config, self.spec
        algo, mode = cfg.algorithm, cfg.mode
        r, d = batch.rewards, batch.terminals
        if algo == "iql":
            boot = forward(self.value, self._inputs(batch.next_states))[:, 0]
            return r + cfg.gamma * (1.0 - d) * boot
        nxt = self.target_utilities(batch.next_states)
        if algo == "bcq":
            probs = np.exp(self.log_policy(batch.next_states))
            return ops.bcq_targets_batch(r, nxt, probs, cfg.gamma, cfg.bcq_tau, d, spec, mode)
        if algo == "onestep":
            probs = np.exp(self.log_policy(batch.next_states))
            boot = ops.onestep_values_batch(probs, nxt, spec, mode)
            return r + cfg.gamma * (1.0 - d) * boot
        maxima = kernels.segment_max(nxt, spec.offsets)
        if mode is DecompMode.INDEPENDENT:
            return r[:, None] + (cfg.gamma * (1.0 - d))[:, None] * maxima
        return r + cfg.gamma * (1.0 - d) * aggregate(maxima, mode)

    # ----------------------------------------------------------------- update
    def _step(self, net: NetParams, opt: AdamState, states, loss) -> float:
        grads = self._grads.get(id(net))
        if grads is None:
            grads = self._grads[id(net)] = GradBundle(net.sizes)
        value, grads = backward(net, self._inputs(states), loss, out=grads)
        if self.config.grad_clip is not None:
            clip_global_norm(grads, self.config.grad_clip)
        adam_step(net, grads, opt, self.config.learning_rate)
        return value

    def update(self, batch) -> dict[str, float]:
        """One gradient step on every net the algorithm trains.

        Order per step: policy, critics, state value, then Polyak averaging.
        The IQL critic target reads V before V is updated.
        """
        cfg, spec = self.config, self.spec
        metrics: dict[str, float] = {}
        try:
            if self.policy is not None:
                metrics["policy_loss"] = self._step(
                    self.policy, self.policy_opt, batch.states, FactoredNLLLoss(batch.actions, spec)
                )
            if self.critics:
                targets = self.compute_targets(batch)
                alpha = cfg.cql_alpha if cfg.algorithm == "cql" else None
                total = td = pen = 0.0
                for net, opt in zip(self.critics, self.critic_opt):
                    loss = DecomposedTDLoss(batch.actions, targets, spec, cfg.mode, cfg.huber_delta, alpha)
                    total += self._step(net, opt, batch.states, loss)
                    td += loss.last_td
                    pen += loss.last_penalty
                n = len(self.critics)
                metrics["critic_loss"] = total / n
                metrics["td_loss"] = td / n
                if alpha is not None:
                    metrics["cql_penalty"] = pen / n
            if self.value is not None:
                q_hat = aggregate(
                    gather(self.target_utilities(batch.states), batch.actions, spec), cfg.mode
                )
                metrics["value_loss"] = self._step(
                    self.value, self.value_opt, batch.states, ExpectileLoss(q_hat, cfg.iql_tau)
                )
        except TrainingDivergence as exc:
            exc.update = self.updates
            exc.args = (f"{exc.args[0]} (update {self.updates}, algorithm {cfg.algorithm})",)
            raise
        for target, online in zip(self.targets, self.critics):
            polyak(target, online, cfg.target_update_rate)
        self.updates += 1
        return metrics

    # ----------------------------------------------------------------- persistence
    def nets(self) -> dict[str, tuple[NetParams, AdamState | None]]:
        """All networks by role name."""
        out: dict[str, tuple[NetParams, AdamState | None]] = {}
        for i, (c, opt) in enumerate(zip(self.critics, self.critic_opt)):
            out[f"critic{i}"] = (c, opt)
            out[f"target{i}"] = (self.targets[i], None)
        if self.policy is not None:
            out["policy"] = (self.policy, self.policy_opt)
        if self.value is not None:
            out["value"] = (self.value, self.value_opt)
        return out

    def save(self, directory: str | os.PathLike, tag: str = "final") -> Path:
        """Write one FRLNET1 file per net plus a JSON manifest; returns the manifest path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        roles = {}
        for role, (net, opt) in self.nets().items():
            name = f"{tag}_{role}.frlnet"
            save_net(directory / name, net, opt)
            roles[role] = name
        manifest = {
            "format": "FRLNET1",
            "roles": roles,
            "updates": self.updates,
            "seed": self.seed,
            "obs_dim": self.obs_dim,
            "action_dims": list(self.spec.n),
            "config": self.config.to_dict(),
            "rng_state": self.rng.bit_generator.state,
        }
        path = directory / f"{tag}_manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, manifest_path: str | os.PathLike) -> "Agent":
        manifest_path = Path(manifest_path)
        m = json.loads(manifest_path.read_text())
        config = AgentConfig.from_dict(m["config"])
        agent = cls(config, ActionSpec(m["action_dims"]), m["obs_dim"], m["seed"])
        for role, name in m["roles"].items():
            net, opt = load_net(manifest_path.parent / name)
            if role.startswith("critic"):
                i = int(role[6:])
                agent.critics[i], agent.critic_opt[i] = net, opt
            elif role.startswith("target"):
                agent.targets[int(role[6:])] = net
            elif role == "policy":
                agent.policy, agent.policy_opt = net, opt
            elif role == "value":
                agent.value, agent.value_opt = net, opt
            else:
                raise ConfigError(f"unknown network role {role!r} in {manifest_path}")
        agent.updates = m["updates"]
        agent.rng.bit_generator.state = m["rng_state"]
        agent._grads = {}
        return agent
