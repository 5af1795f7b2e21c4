"""Offline and online training loops."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from factored_rl.agents.agent import Agent, AgentConfig
from factored_rl.data import Batch, Dataset, sample_batch
from factored_rl.errors import ConfigError, InvalidDataset

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "update", "policy_loss", "critic_loss", "td_loss", "cql_penalty", "value_loss", "eval_return",
    "eval_score",
)


@dataclass
class TrainLog:
    """Interval-averaged metrics rows, plus per-update losses when requested."""

    rows: list[dict] = field(default_factory=list)
    per_update: list[dict[str, float]] = field(default_factory=list)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, restval="")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _interval_row(update: int, window: list[dict[str, float]]) -> dict:
    row: dict = {"update": update}
    for key in METRIC_COLUMNS[1:6]:
        vals = [m[key] for m in window if key in m]
        if vals:
            row[key] = math.fsum(vals) / len(vals)
    return row


def train_offline(
    dataset: Dataset,
    config: AgentConfig,
    seed: int,
    out_dir: str | os.PathLike | None = None,
    evaluate: Callable[[Agent], tuple[float, float]] | None = None,
    resume: bool = False,
    keep_per_update: bool = False,
    trace: Callable[[Agent], None] | None = None,
) -> tuple[Agent, TrainLog]:
    """Run ``config.updates`` gradient updates on batches drawn from ``dataset``.

    ``evaluate(agent) -> (return, normalized score)`` is called every
    ``config.eval_interval`` updates when both are set.  ``trace(agent)`` is
    called at the same cadence (Q-error tracking).  With ``out_dir`` the
    metrics CSV, periodic checkpoints and a final checkpoint are written
    there; ``resume=True`` continues from the latest checkpoint in it.
    """
    if config.algorithm == "online-decqn":
        raise ConfigError("online-decqn is trained with train_online")
    spec = dataset.action_spec
    if len(dataset) == 0:
        raise InvalidDataset("cannot train on an empty dataset")
    agent = None
    out = Path(out_dir) if out_dir is not None else None
    if resume and out is not None and (out / "latest_manifest.json").exists():
        agent = Agent.load(out / "latest_manifest.json")
        if agent.config != config or agent.spec != spec:
            raise ConfigError(f"checkpoint in {out} was written with a different config")
        log.info("resuming from update %d", agent.updates)
    if agent is None:
        agent = Agent(config, spec, dataset.header.obs_dim, seed)
    tlog = TrainLog()
    if out is not None and agent.updates > 0 and (out / "metrics.csv").exists():
        with open(out / "metrics.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                if int(row["update"]) <= agent.updates:
                    tlog.rows.append({k: (int(v) if k == "update" else float(v)) for k, v in row.items() if v != ""})

    window: list[dict[str, float]] = []
    while agent.updates < config.updates:
        batch = sample_batch(dataset, config.batch_size, agent.rng)
        metrics = agent.update(batch)
        window.append(metrics)
        if keep_per_update:
            tlog.per_update.append(metrics)
        u = agent.updates
        row = None
        if u % config.log_interval == 0 or u == config.updates:
            row = _interval_row(u, window)
            window = []
        if config.eval_interval and u % config.eval_interval == 0:
            if evaluate is not None:
                ret, score = evaluate(agent)
                row = row if row is not None else {"update": u}
                row["eval_return"], row["eval_score"] = ret, score
            if trace is not None:
                trace(agent)
        if row is not None:
            tlog.rows.append(row)
            log.debug("update %d: %s", u, row)
        if out is not None and config.checkpoint_interval and u % config.checkpoint_interval == 0:
            agent.save(out, tag=f"u{u:07d}")
            agent.save(out, tag="latest")
            tlog.write_csv(out / "metrics.csv")
    if out is not None:
        agent.save(out, tag="final")
        agent.save(out, tag="latest")
        tlog.write_csv(out / "metrics.csv")
    return agent, tlog


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions."""

    def __init__(self, capacity: int, obs_dim: int, action_dims: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim))
        self.next_states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dims), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, terminal) -> None:
        i = self._next
        self.states[i], self.actions[i], self.rewards[i] = s, a, r
        self.next_states[i], self.terminals[i] = s2, float(terminal)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(
            self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx],
            self.terminals[idx],
        )


@dataclass
class OnlineLog:
    env_steps: list[int] = field(default_factory=list)
    eval_returns: list[float] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def final_return(self) -> float:
        return self.eval_returns[-1] if self.eval_returns else float("nan")


def greedy_return(env, agent, episodes: int, seed: int) -> float:
    """Mean undiscounted return of the greedy policy over ``episodes`` episodes."""
    returns = []
    env.reset(seed=seed)
    for _ in range(episodes):
        obs, done, rewards = env.reset(), False, []
        while not done:
            obs, r, done, _ = env.step(agent.act(obs))
            rewards.append(r)
        returns.append(math.fsum(rewards))
    return math.fsum(returns) / episodes


def train_online(
    env,
    config: AgentConfig,
    seed: int,
    stop_return: float | None = None,
    max_env_steps: int = 100_000,
    eval_interval: int = 1000,
    eval_env=None,
    on_eval: Callable[[Agent, int, float], None] | None = None,
) -> tuple[Agent, OnlineLog]:
    """Online DecQN with per-dimension epsilon-greedy exploration.

    Every ``eval_interval`` environment steps the greedy policy is evaluated
    for ``config.eval_episodes`` episodes on ``eval_env`` (a fresh copy of
    ``env`` by default); training stops once that return reaches
    ``stop_return``.  ``on_eval(agent, env_step, return)`` is called after
    every evaluation, before the stop check.
    """
    if config.algorithm != "online-decqn":
        raise ConfigError("train_online needs algorithm 'online-decqn'")
    spec = env.action_spec
    agent = Agent(config, spec, env.observation_dim, seed)
    if eval_env is None:
        eval_env = type(env)(env.config)
    n_arr = np.asarray(spec.n)
    explore_rng = np.random.default_rng([seed, 3])
    buffer = ReplayBuffer(config.replay_capacity, env.observation_dim, spec.N)
    olog = OnlineLog()
    obs = env.reset(seed=int(np.random.SeedSequence([seed, 4]).generate_state(1)[0]))
    eval_seed = int(np.random.SeedSequence([seed, 5]).generate_state(1)[0])
    for step in range(1, max_env_steps + 1):
        a = agent.act(obs)
        if config.epsilon > 0:
            explore = explore_rng.random(spec.N) < config.epsilon
            a = np.where(explore, explore_rng.integers(0, n_arr), a)
        nxt, r, done, info = env.step(a)
        buffer.add(obs, a, r, nxt, info.goal_reached)
        obs = env.reset() if done else nxt
        if len(buffer) >= max(config.learning_starts, 1):
            agent.update(buffer.sample(config.batch_size, agent.rng))
        if step % eval_interval == 0:
            ret = greedy_return(eval_env, agent, config.eval_episodes, eval_seed)
            olog.env_steps.append(step)
            olog.eval_returns.append(ret)
            log.info("env step %d: greedy return %.2f", step, ret)
            if on_eval is not None:
                on_eval(agent, step, ret)
            if stop_return is not None and ret >= stop_return:
                olog.stopped_early = True
                break
    return agent, olog
