import json
import math
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import enumerate_onestep_value, softmax_nll

from factored_rl.agents import (
    Agent,
    AgentConfig,
    ReplayBuffer,
    train_offline,
    train_online,
)
from factored_rl.agents import ops
from factored_rl.data import Batch, collect, mix
from factored_rl.decomp import ActionSpec, decqn_target
from factored_rl.env_maze import MazeConfig, MazeEnv, random_policy_return
from factored_rl.nn import forward
from factored_rl.errors import ConfigError, TrainingDivergence, UnsupportedModeError

SMALL = dict(hidden_width=16, batch_size=32, updates=20, log_interval=5, checkpoint_interval=0)


def small(algorithm, **kw):
    return AgentConfig(algorithm=algorithm, **{**SMALL, **kw})


@pytest.fixture(scope="module")
def dataset():
    env = MazeEnv()
    rnd = collect(env, lambda o: np.zeros(3, dtype=int), 600, 1.0, seed=0, source="random")
    exp = collect(env, lambda o: np.array([1, 1, 0]), 600, 0.1, seed=1, source="expert")
    return mix([(rnd, 0.5), (exp, 0.5)], 1000, seed=2)


def random_batch(rng, spec, B=8, obs_dim=2):
    return Batch(
        rng.random((B, obs_dim)),
        np.stack([rng.integers(0, n, size=B) for n in spec.n], axis=1),
        rng.normal(size=B),
        rng.random((B, obs_dim)),
        (rng.random(B) < 0.2).astype(float),
    )


def all_params(agent):
    return {role: net.flat.copy() for role, (net, _) in agent.nets().items()}


class TestOpsExamples:
    def test_bcq_mask(self):
        np.testing.assert_array_equal(ops.bcq_allowed([0.6, 0.3, 0.1], 0.5), [True, True, False])

    def test_bcq_mask_extremes(self):
        np.testing.assert_array_equal(ops.bcq_allowed([0.6, 0.3, 0.1], 0.0), [True] * 3)
        np.testing.assert_array_equal(ops.bcq_allowed([0.6, 0.3, 0.1], 1.0), [True, False, False])

    def test_bcq_filters_high_utility(self):
        assert ops.bcq_target(0.0, [[5.0, 10.0]], [[0.9, 0.1]], 1.0, 0.5) == 5.0

    def test_bcq_tau_one_uses_policy_argmax(self):
        u = [[1.0, 7.0], [3.0, -2.0, 4.0]]
        pi = [[0.8, 0.2], [0.1, 0.6, 0.3]]
        assert ops.bcq_target(0.5, u, pi, 0.9, 1.0) == pytest.approx(0.5 + 0.9 * (1.0 - 2.0) / 2, abs=1e-15)

    def test_bcq_terminal(self):
        assert ops.bcq_target(2.0, [[5.0, 10.0]], [[0.5, 0.5]], 0.99, 0.3, terminal=True) == 2.0

    @settings(max_examples=50, deadline=None)
    @given(
        u=st.lists(st.lists(st.floats(-10, 10), min_size=2, max_size=4), min_size=1, max_size=4),
        r=st.floats(-3, 3),
        gamma=st.floats(0, 1),
        seed=st.integers(0, 1000),
    )
    def test_bcq_tau_zero_is_decqn(self, u, r, gamma, seed):
        rng = np.random.default_rng(seed)
        pi = [rng.dirichlet(np.ones(len(b))) for b in u]
        assert ops.bcq_target(r, u, pi, gamma, 0.0) == decqn_target(r, u, gamma, "mean", False)

    def test_bcq_bad_probs(self):
        with pytest.raises(ValueError):
            ops.bcq_allowed([0.0, 0.0], 0.5)

    @pytest.mark.parametrize("tau,u,expected", [(0.5, 2.0, 2.0), (0.8, -1.0, 0.2), (0.8, 1.0, 0.8)])
    def test_expectile(self, tau, u, expected):
        assert ops.expectile_loss(u, 0.0, tau) == pytest.approx(expected, abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(q=st.floats(-100, 100), v=st.floats(-100, 100))
    def test_expectile_half_is_half_square(self, q, v):
        assert ops.expectile_loss(q, v, 0.5) == 0.5 * (q - v) ** 2

    def test_cql_equal_utilities(self):
        spec = ActionSpec([3])
        assert ops.cql_penalty(np.full((1, 3), 2.5), np.array([[1]]), spec, 1.0) == pytest.approx(math.log(3), abs=1e-12)

    def test_cql_alpha_zero(self, rng):
        spec = ActionSpec([2, 3])
        assert ops.cql_penalty(rng.normal(size=(4, 5)), np.zeros((4, 2), dtype=int), spec, 0.0) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_cql_is_scaled_softmax_nll(self, seed):
        rng = np.random.default_rng(seed)
        spec = ActionSpec([2, 3, 4])
        values = rng.normal(size=(6, 9)) * 5
        actions = np.stack([rng.integers(0, n, size=6) for n in spec.n], axis=1)
        alpha = rng.uniform(0.1, 3)
        expected = alpha * softmax_nll(values, actions, list(spec.n))
        assert ops.cql_penalty(values, actions, spec, alpha) == pytest.approx(expected, abs=1e-6)

    def test_iql_large_lambda_is_bc(self):
        a = ops.iql_extract([[5.0, 0.0], [0.0, 9.0]], np.log([[0.3, 0.7], [0.6, 0.4]]), 1e12)
        np.testing.assert_array_equal(a, [1, 0])

    def test_iql_uniform_policy_is_argmax(self):
        a = ops.iql_extract([[0.5, 1.5, -1.0]], np.log([[1 / 3] * 3]), 2.0)
        np.testing.assert_array_equal(a, [1])

    def test_iql_arithmetic(self):
        # 1 + ln 0.1 = -1.30 < ln 0.9 = -0.105
        a = ops.iql_extract([[1.0, 0.0]], [[math.log(0.1), math.log(0.9)]], 1.0)
        assert 1 + math.log(0.1) < math.log(0.9)
        np.testing.assert_array_equal(a, [1])

    def test_iql_bad_lambda(self):
        with pytest.raises(ValueError):
            ops.iql_extract([[1.0]], [[0.0]], 0.0)

    def test_onestep_one_hot(self):
        assert ops.onestep_value([[0, 1], [1, 0, 0]], [[3.0, 5.0], [7.0, 1.0, 2.0]]) == 6.0

    def test_onestep_uniform(self):
        assert ops.onestep_value([[0.5, 0.5]], [[2.0, 4.0]]) == 3.0

    @pytest.mark.parametrize("n", [[2, 3], [4, 4, 4], [2, 2, 2, 2, 2, 2, 2, 2, 2, 2], [5, 7, 3]])
    def test_onestep_enumeration(self, n, rng):
        probs = [rng.dirichlet(np.ones(k)) for k in n]
        utils = [rng.normal(size=k) for k in n]
        assert ops.onestep_value(probs, utils) == pytest.approx(enumerate_onestep_value(probs, utils), abs=1e-10)

    def test_bc_loss_examples(self):
        acts = np.array([[0, 1], [1, 2]])
        uniform = [np.log(np.full((2, 2), 0.5)), np.log(np.full((2, 3), 1 / 3))]
        assert ops.bc_loss(uniform, acts) == pytest.approx((math.log(2) + math.log(3)) / 2, abs=1e-15)
        assert ops.bc_loss([np.log(np.full((2, 2), 0.5))], acts[:, :1]) == pytest.approx(math.log(2), abs=1e-15)

    def test_bc_loss_perfect(self):
        acts = np.array([[1]])
        assert ops.bc_loss([np.array([[-1e-12, -40.0]]) * [[1, 1]]], acts) == pytest.approx(40.0)
        assert ops.bc_loss([np.array([[-40.0, 0.0]])], acts) == 0.0


class TestConfig:
    def test_defaults(self):
        c = AgentConfig()
        assert (c.gamma, c.target_update_rate, c.learning_rate, c.batch_size) == (0.99, 0.005, 3e-4, 256)
        assert (c.hidden_width, c.hidden_layers, c.dual_critic) == (512, 2, True)

    @pytest.mark.parametrize("bad", [dict(gamma=1.5), dict(algorithm="iql", iql_tau=1.0), dict(algorithm="bcq", bcq_tau=-0.1),
                                     dict(algorithm="sac"), dict(algorithm="cql", cql_alpha=-1.0), dict(learning_rate=0.0), dict(decomp="product")])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            AgentConfig(**bad)

    def test_independent_rejected_for_value_methods(self):
        for algo in ("iql", "onestep"):
            with pytest.raises(ConfigError):
                AgentConfig(algorithm=algo, decomp="independent")

    def test_dict_round_trip(self):
        c = AgentConfig(algorithm="cql", cql_alpha=0.5, hidden_width=32)
        assert AgentConfig.from_dict(c.to_dict()) == c
        with pytest.raises(ConfigError):
            AgentConfig.from_dict({**c.to_dict(), "dropout": 0.1})


class TestReductions:
    def test_cql_alpha_zero_matches_decqn(self, dataset):
        _, a = train_offline(dataset, small("decqn"), seed=3, keep_per_update=True)
        _, b = train_offline(dataset, small("cql", cql_alpha=0.0), seed=3, keep_per_update=True)
        assert [m["td_loss"] for m in a.per_update] == [m["td_loss"] for m in b.per_update]
        assert [m["critic_loss"] for m in a.per_update] == [m["critic_loss"] for m in b.per_update]
        assert all(m["cql_penalty"] == 0.0 for m in b.per_update)

    def test_bcq_tau_zero_matches_decqn(self, dataset):
        ag_a, a = train_offline(dataset, small("decqn"), seed=4, keep_per_update=True)
        ag_b, b = train_offline(dataset, small("bcq", bcq_tau=0.0), seed=4, keep_per_update=True)
        assert [m["critic_loss"] for m in a.per_update] == [m["critic_loss"] for m in b.per_update]
        for x, y in zip(ag_a.critics, ag_b.critics):
            np.testing.assert_array_equal(x.flat, y.flat)
        states = dataset.states[:50]
        np.testing.assert_array_equal(ag_a.act_batch(states), ag_b.act_batch(states))

    def test_onestep_equals_iql_with_exact_value(self, rng):
        spec = ActionSpec([2, 3])
        cfg = dict(hidden_width=8)
        one = Agent(AgentConfig(algorithm="onestep", **cfg), spec, 2, seed=0)
        iql = Agent(AgentConfig(algorithm="iql", **cfg), spec, 2, seed=0)
        batch = random_batch(rng, spec)
        probs = np.exp(one.log_policy(batch.next_states))
        exact_v = ops.onestep_values_batch(probs, one.target_utilities(batch.next_states), spec)
        y_iql_form = batch.rewards + iql.config.gamma * (1 - batch.terminals) * exact_v
        np.testing.assert_allclose(one.compute_targets(batch), y_iql_form, rtol=0, atol=1e-14)

    def test_bc_has_no_critics(self, dataset):
        agent, tlog = train_offline(dataset, small("bc"), seed=0, keep_per_update=True)
        assert agent.critics == [] and agent.targets == []
        assert all(set(m) == {"policy_loss"} for m in tlog.per_update)
        with pytest.raises(UnsupportedModeError):
            agent.utilities(dataset.states[:2])

    def test_bc_learns_expert_action(self, dataset):
        agent, tlog = train_offline(dataset, small("bc", updates=200, learning_rate=3e-3), seed=0)
        assert tlog.rows[-1]["policy_loss"] < tlog.rows[0]["policy_loss"]


class TestUpdates:
    @pytest.mark.parametrize("algo", ["decqn", "bcq", "cql", "iql", "onestep"])
    def test_finite_and_targets_bounded(self, algo, dataset):
        cfg = small(algo)
        agent = Agent(cfg, dataset.action_spec, 2, seed=1)
        running = max(float(np.abs(c.flat).max()) for c in agent.critics)
        rng = np.random.default_rng(0)
        for _ in range(30):
            idx = rng.integers(0, len(dataset), size=32)
            sub = dataset.subset(idx)
            agent.update(Batch(sub.states, sub.actions, sub.rewards, sub.next_states, sub.terminals))
            running = max(running, max(float(np.abs(c.flat).max()) for c in agent.critics))
            for flat in all_params(agent).values():
                assert np.isfinite(flat).all()
            for t in agent.targets:
                assert np.abs(t.flat).max() <= running + 1e-12

    def test_identical_critics_stay_identical(self, dataset, rng):
        agent = Agent(small("decqn"), dataset.action_spec, 2, seed=5)
        agent.critics[1] = agent.critics[0].copy()
        agent.targets[1] = agent.targets[0].copy()
        for _ in range(10):
            agent.update(random_batch(rng, dataset.action_spec, B=16))
        np.testing.assert_array_equal(agent.critics[0].flat, agent.critics[1].flat)
        np.testing.assert_array_equal(agent.targets[0].flat, agent.targets[1].flat)

    def test_shared_target_is_mean_of_targets(self, dataset, rng):
        agent = Agent(small("decqn"), dataset.action_spec, 2, seed=6)
        batch = random_batch(rng, dataset.action_spec)
        u = [forward(t, agent._inputs(batch.next_states)) for t in agent.targets]
        mean = (u[0] + u[1]) / 2
        per_dim = [mean[:, o:o + n].max(axis=1) for o, n in zip(agent.spec.offsets[:-1], agent.spec.n)]
        expected = batch.rewards + 0.99 * (1 - batch.terminals) * np.mean(per_dim, axis=0)
        np.testing.assert_allclose(agent.compute_targets(batch), expected, rtol=1e-14, atol=1e-14)

    def test_input_normalization(self, dataset):
        agent = Agent(small("decqn"), dataset.action_spec, 2, seed=0)
        np.testing.assert_array_equal(agent._inputs(np.array([[0.0, 1.0], [0.5, 0.25]])), [[-1.0, 1.0], [0.0, -0.5]])
        raw = Agent(small("decqn", normalize_inputs=False), dataset.action_spec, 2, seed=0)
        x = np.array([[0.3, 0.7]])
        np.testing.assert_array_equal(raw._inputs(x), x)
        np.testing.assert_array_equal(agent.utilities(x), raw.utilities(2 * x - 1))

    def test_single_critic(self, dataset, rng):
        agent = Agent(small("decqn", dual_critic=False), dataset.action_spec, 2, seed=0)
        assert len(agent.critics) == 1
        agent.update(random_batch(rng, dataset.action_spec))

    def test_iql_value_uses_pre_update_v(self, dataset, rng):
        agent = Agent(small("iql"), dataset.action_spec, 2, seed=2)
        batch = random_batch(rng, dataset.action_spec)
        y_before = agent.compute_targets(batch)
        v_before = agent.value.copy()
        agent.update(batch)
        assert agent.value != v_before
        boot = forward(v_before, agent._inputs(batch.next_states))[:, 0]
        np.testing.assert_array_equal(y_before, batch.rewards + 0.99 * (1 - batch.terminals) * boot)

    def test_divergence_reports_update(self, dataset, rng):
        agent = Agent(small("decqn"), dataset.action_spec, 2, seed=0)
        agent.update(random_batch(rng, dataset.action_spec))
        bad = random_batch(rng, dataset.action_spec)
        bad.rewards[3] = np.nan
        before = all_params(agent)
        with pytest.raises(TrainingDivergence) as info:
            agent.update(bad)
        assert info.value.update == 1
        assert "update 1" in str(info.value)
        for role in ("target0", "target1"):
            np.testing.assert_array_equal(all_params(agent)[role], before[role])

    @pytest.mark.parametrize("mode", ["sum", "independent"])
    def test_other_modes_train(self, mode, dataset):
        agent, tlog = train_offline(dataset, small("decqn", decomp=mode), seed=0)
        assert agent.updates == 20
        assert np.isfinite(tlog.rows[-1]["critic_loss"])
        a = agent.act(dataset.states[0])
        assert np.isfinite(agent.q_value(dataset.states[0], a))

    def test_act_shapes(self, dataset):
        for algo in ("decqn", "bcq", "cql", "iql", "onestep", "bc"):
            agent = Agent(small(algo), dataset.action_spec, 2, seed=0)
            acts = agent.act_batch(dataset.states[:7])
            assert acts.shape == (7, 3)
            assert ((acts >= 0) & (acts < 2)).all()


class TestTrainOffline:
    def test_log_cadence_and_csv(self, dataset, tmp_path):
        cfg = small("cql", updates=12, log_interval=5, checkpoint_interval=10)
        agent, tlog = train_offline(dataset, cfg, seed=0, out_dir=tmp_path)
        assert [r["update"] for r in tlog.rows] == [5, 10, 12]
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("update,policy_loss,critic_loss,td_loss,cql_penalty")
        assert len(lines) == 4
        assert (tmp_path / "u0000010_manifest.json").exists()
        assert (tmp_path / "final_manifest.json").exists()

    def test_eval_hook(self, dataset):
        calls = []
        cfg = small("decqn", updates=10, eval_interval=4)
        _, tlog = train_offline(dataset, cfg, seed=0, evaluate=lambda ag: (calls.append(ag.updates) or 1.0, 0.5))
        assert calls == [4, 8]
        assert [r.get("eval_score") for r in tlog.rows if "eval_score" in r] == [0.5, 0.5]

    def test_same_seed_same_params(self, dataset):
        a, _ = train_offline(dataset, small("iql"), seed=7)
        b, _ = train_offline(dataset, small("iql"), seed=7)
        assert all_params(a).keys() == all_params(b).keys()
        for k, v in all_params(a).items():
            np.testing.assert_array_equal(v, all_params(b)[k])

    def test_resume_matches_uninterrupted(self, dataset, tmp_path):
        cfg = small("onestep", updates=10, checkpoint_interval=4)
        full, _ = train_offline(dataset, cfg, seed=2, out_dir=tmp_path / "a")
        resumed_dir = tmp_path / "b"
        resumed_dir.mkdir()
        for f in (tmp_path / "a").glob("u0000004_*"):
            shutil.copy(f, resumed_dir / f.name)
        shutil.copy(resumed_dir / "u0000004_manifest.json", resumed_dir / "latest_manifest.json")
        resumed, _ = train_offline(dataset, cfg, seed=2, out_dir=resumed_dir, resume=True)
        assert resumed.updates == 10
        for k, v in all_params(full).items():
            np.testing.assert_array_equal(v, all_params(resumed)[k])

    def test_resume_rejects_other_config(self, dataset, tmp_path):
        train_offline(dataset, small("decqn", updates=4), seed=0, out_dir=tmp_path)
        with pytest.raises(ConfigError):
            train_offline(dataset, small("decqn", updates=4, gamma=0.9), seed=0, out_dir=tmp_path, resume=True)

    def test_save_load_round_trip(self, dataset, tmp_path):
        agent, _ = train_offline(dataset, small("iql", updates=5), seed=1)
        manifest = agent.save(tmp_path, "x")
        roles = json.loads(manifest.read_text())["roles"]
        assert set(roles) == {"critic0", "critic1", "target0", "target1", "policy", "value"}
        back = Agent.load(manifest)
        assert back.updates == 5 and back.config == agent.config
        np.testing.assert_array_equal(back.act_batch(dataset.states[:20]), agent.act_batch(dataset.states[:20]))
        assert back.rng.integers(1 << 30) == agent.rng.integers(1 << 30)

    def test_online_algorithm_rejected(self, dataset):
        with pytest.raises(ConfigError):
            train_offline(dataset, small("online-decqn"), seed=0)


class TestOnline:
    def test_replay_fifo(self):
        buf = ReplayBuffer(3, 1, 1)
        for i in range(5):
            buf.add([i], [0], float(i), [i + 1], False)
        assert len(buf) == 3
        assert sorted(buf.rewards) == [2.0, 3.0, 4.0]

    def test_stops_quickly_above_random(self):
        cfg = MazeConfig(max_steps=20)
        rand = random_policy_return(cfg, 50, seed=0)
        ac = AgentConfig(algorithm="online-decqn", hidden_width=8, batch_size=16, learning_starts=16, eval_episodes=2)
        _, olog = train_online(MazeEnv(cfg), ac, seed=0, stop_return=rand - 1.0, max_env_steps=1000, eval_interval=50)
        assert olog.stopped_early and olog.env_steps == [50]

    def test_same_seed_identical(self):
        cfg = MazeConfig(max_steps=30)
        ac = AgentConfig(algorithm="online-decqn", hidden_width=8, batch_size=16, learning_starts=16, eval_episodes=1)
        a, la = train_online(MazeEnv(cfg), ac, seed=4, max_env_steps=200, eval_interval=100)
        b, lb = train_online(MazeEnv(cfg), ac, seed=4, max_env_steps=200, eval_interval=100)
        assert la.eval_returns == lb.eval_returns
        for k, v in all_params(a).items():
            np.testing.assert_array_equal(v, all_params(b)[k])

    def test_offline_algorithm_rejected(self):
        with pytest.raises(ConfigError):
            train_online(MazeEnv(), AgentConfig(algorithm="decqn"), seed=0)
