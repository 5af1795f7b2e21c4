import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from factored_rl.env_maze import PRESETS, MazeConfig, MazeEnv, random_policy_return
from factored_rl.evaluation import (
    EvalReport,
    QErrorTrace,
    discounted_tails,
    evaluate,
    mc_q_error,
    normalized_score,
    read_reports_csv,
    rollout_return,
    summarize,
    write_reports_csv,
)
from test_env_maze import straight_line_policy


class Fixed:
    """Test double that always plays one action and reports a constant Q."""

    def __init__(self, action, q=0.0):
        self.action = np.asarray(action)
        self.q = q

    def act(self, obs):
        return self.action

    def q_value(self, obs, action):
        return self.q


class ExactQ(Fixed):
    """Reports the true discounted return of the all-off policy from step t."""

    def __init__(self, max_steps, gamma):
        super().__init__([0, 0, 0])
        self.tails = discounted_tails([-0.1] * max_steps, gamma)
        self.calls = 0

    def q_value(self, obs, action):
        v = self.tails[self.calls % len(self.tails)]
        self.calls += 1
        return v


class TestRollout:
    def test_all_off(self):
        mean, se = rollout_return(MazeEnv(), Fixed([0, 0, 0]), 5, seed=0)
        assert mean == pytest.approx(-15.0, abs=1e-12)
        assert se == 0.0

    def test_deterministic_zero_se(self):
        _, se = rollout_return(MazeEnv(), Fixed([1, 1, 0]), 4, seed=1)
        assert se == 0.0

    def test_noisy_env_se_non_negative(self):
        mean, se = rollout_return(MazeEnv(PRESETS["benchmark"]), Fixed([1, 1, 0]), 6, seed=1)
        assert se >= 0.0

    def test_scripted_beats_random(self):
        env = MazeEnv()
        mean, _ = rollout_return(env, type("A", (), {"act": staticmethod(straight_line_policy(env))})(), 3, seed=0)
        assert mean > random_policy_return(env.config, 100, seed=0)

    def test_zero_episodes(self):
        with pytest.raises(ValueError):
            rollout_return(MazeEnv(), Fixed([0, 0, 0]), 0, seed=0)

    def test_evaluate_report(self):
        rep = evaluate(MazeEnv(), Fixed([0, 0, 0]), 3, seed=0, anchors=(-15.0, 85.0))
        assert rep.episodes == 3 and rep.seed == 0
        assert rep.normalized_score == pytest.approx(0.0, abs=1e-9)


class TestNormalizedScore:
    def test_examples(self):
        assert normalized_score(60, 10, 110) == 50.0
        assert normalized_score(10, 10, 110) == 0.0
        assert normalized_score(110, 10, 110) == 100.0

    def test_out_of_range(self):
        assert normalized_score(210, 10, 110) == 200.0
        assert normalized_score(-90, 10, 110) == -100.0

    def test_equal_anchors(self):
        with pytest.raises(ValueError):
            normalized_score(1.0, 5.0, 5.0)

    @settings(max_examples=100, deadline=None)
    @given(
        s=st.integers(-1000, 1000), lo=st.integers(-1000, 1000), hi=st.integers(-1000, 1000),
        a=st.integers(1, 64), c=st.integers(-1000, 1000),
    )
    def test_affine_invariant(self, s, lo, hi, a, c):
        assume(lo != hi)
        base = normalized_score(float(s), float(lo), float(hi))
        moved = normalized_score(float(a * s + c), float(a * lo + c), float(a * hi + c))
        assert moved == pytest.approx(base, rel=1e-12, abs=1e-12)


class TestQError:
    def test_tails(self):
        np.testing.assert_allclose(discounted_tails([1.0, 2.0, 3.0], 0.5), [2.75, 3.5, 3.0], rtol=1e-15)

    def test_gamma_zero_is_immediate_reward(self):
        err = mc_q_error(MazeEnv(MazeConfig(max_steps=20)), Fixed([0, 0, 0], q=1.0), 0.0, rollouts=2)
        assert err == pytest.approx(1.1, abs=1e-12)

    def test_exact_double_has_zero_error(self):
        cfg = MazeConfig(max_steps=40)
        err = mc_q_error(MazeEnv(cfg), ExactQ(40, 0.99), 0.99, rollouts=3, horizon=500)
        assert err == 0.0

    def test_horizon_caps_pairs(self):
        agent = ExactQ(40, 0.9)
        mc_q_error(MazeEnv(MazeConfig(max_steps=40)), agent, 0.9, rollouts=2, horizon=10)
        assert agent.calls == 20

    def test_non_negative(self):
        assert mc_q_error(MazeEnv(MazeConfig(max_steps=10)), Fixed([1, 0, 0], q=-3.0), 0.9, rollouts=1) >= 0

    @pytest.mark.parametrize("gamma,T", [(0.99, 150), (0.9, 40), (0.5, 7)])
    def test_constant_reward_tail_closed_form(self, gamma, T):
        """A constant reward over T steps leaves gamma^T r / (1 - gamma) of the infinite sum uncounted."""
        tails = discounted_tails([-0.1] * T, gamma)
        infinite = -0.1 / (1 - gamma)
        assert tails[0] == pytest.approx(infinite * (1 - gamma**T), rel=1e-12)
        assert abs(infinite - tails[0]) == pytest.approx(gamma**T * 0.1 / (1 - gamma), rel=1e-9)

    def test_invalid(self):
        with pytest.raises(ValueError):
            mc_q_error(MazeEnv(), Fixed([0, 0, 0]), 0.9, rollouts=0)

    def test_trace_strictly_increasing(self, tmp_path):
        tr = QErrorTrace()
        tr.add(1000, 2.5)
        tr.add(2000, 1.5)
        with pytest.raises(ValueError):
            tr.add(2000, 1.0)
        tr.write_csv(tmp_path / "q.csv")
        assert (tmp_path / "q.csv").read_text().splitlines() == ["update,mean_abs_error", "1000,2.5", "2000,1.5"]


def report(score, seed=0):
    return EvalReport(100, score, 0.0, score, seed)


class TestSummary:
    def test_mean_se(self):
        rows = [("cql", "expert", report(s, i)) for i, s in enumerate([90.0, 100.0, 110.0])]
        table = summarize(rows)
        mean, se, n = table.cells[("expert", "cql")]
        assert (mean, n) == (100.0, 3)
        assert se == pytest.approx(10.0 / math.sqrt(3), rel=1e-15)
        assert "100.0 ± 5.8" in table.to_text()

    def test_missing_cell(self, tmp_path):
        rows = [("cql", "expert", report(1.0)), ("bc", "medium", report(2.0))]
        table = summarize(rows, ["cql", "bc"], ["expert", "medium"])
        assert set(table.missing) == {("medium", "cql"), ("expert", "bc")}
        assert "missing" in table.to_text()
        table.write_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "dataset,algorithm,mean,std_error,seeds"
        assert "expert,bc,,,0" in lines

    def test_single_seed_zero_se(self):
        assert summarize([("iql", "medium", report(42.0))]).cells[("medium", "iql")] == (42.0, 0.0, 1)

    def test_order_independent(self):
        rows = [("cql", "expert", report(s, i)) for i, s in enumerate([1.0, 2.5, 7.0, -3.0])]
        a = summarize(rows).cells[("expert", "cql")]
        b = summarize(rows[::-1]).cells[("expert", "cql")]
        assert a == b

    def test_reports_csv_round_trip(self, tmp_path):
        rows = [("cql", "expert", EvalReport(100, 97.1234567, 0.25, 98.5, 3))]
        write_reports_csv(tmp_path / "r.csv", rows)
        assert read_reports_csv(tmp_path / "r.csv") == rows
