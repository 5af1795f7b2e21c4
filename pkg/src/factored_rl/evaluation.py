"""Greedy rollouts, normalized scores, Monte-Carlo Q-error and result tables."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    ss = math.fsum((v - mean) ** 2 for v in values)
    return mean, math.sqrt(ss / (n - 1)) / math.sqrt(n)


def episode_returns(env, agent, episodes: int, seed: int) -> list[float]:
    """Undiscounted returns of ``agent.act`` over consecutive episodes."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env.reset(seed=seed)
    returns = []
    for _ in range(episodes):
        obs, done, rewards = env.reset(), False, []
        while not done:
            obs, r, done, _ = env.step(agent.act(obs))
            rewards.append(r)
        returns.append(math.fsum(rewards))
    return returns


def rollout_return(env, agent, episodes: int, seed: int) -> tuple[float, float]:
    """Mean greedy return and its standard error (ddof=1; 0 for one episode)."""
    return _mean_se(episode_returns(env, agent, episodes, seed))


def normalized_score(score: float, random_anchor: float, expert_anchor: float) -> float:
    """0 at the random anchor, 100 at the expert anchor; unbounded either side."""
    if expert_anchor == random_anchor:
        raise ValueError("expert and random anchors coincide; the score is undefined")
    return 100.0 * (score - random_anchor) / (expert_anchor - random_anchor)


@dataclass
class EvalReport:
    episodes: int
    mean_return: float
    std_error: float
    normalized_score: float
    seed: int


def evaluate(env, agent, episodes: int, seed: int, anchors: tuple[float, float]) -> EvalReport:
    """Roll out ``agent`` and score it against ``(random, expert)`` anchors."""
    mean, se = rollout_return(env, agent, episodes, seed)
    return EvalReport(episodes, mean, se, normalized_score(mean, *anchors), seed)


def discounted_tails(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """``G_t = sum_{k >= t} gamma^(k-t) r_k`` for every t."""
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def mc_q_error(env, agent, gamma: float, rollouts: int = 10, horizon: int = 500, seed: int = 0) -> float:
    """Mean |Q(s, a) - G| over the first ``horizon`` pairs of greedy rollouts.

    G is the discounted return actually observed from each visited pair to the
    end of its episode; Q comes from ``agent.q_value``.
    """
    if rollouts < 1 or horizon < 1:
        raise ValueError("rollouts and horizon must be >= 1")
    env.reset(seed=seed)
    errors: list[float] = []
    for _ in range(rollouts):
        obs, done = env.reset(), False
        states, actions, rewards = [], [], []
        while not done:
            a = np.asarray(agent.act(obs))
            states.append(obs)
            actions.append(a)
            obs, r, done, _ = env.step(a)
            rewards.append(r)
        mc = discounted_tails(rewards, gamma)
        for t in range(min(horizon, len(rewards))):
            errors.append(abs(agent.q_value(states[t], actions[t]) - mc[t]))
    return math.fsum(errors) / len(errors)


@dataclass
class QErrorTrace:
    samples: list[tuple[int, float]] = field(default_factory=list)

    def add(self, update: int, error: float) -> None:
        if self.samples and update <= self.samples[-1][0]:
            raise ValueError(f"update {update} is not after {self.samples[-1][0]}")
        self.samples.append((int(update), float(error)))

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["update", "mean_abs_error"])
            for u, e in self.samples:
                w.writerow([u, repr(e)])


REPORT_COLUMNS = ("algorithm", "dataset", "seed", "episodes", "mean_return", "std_error", "normalized_score")


def write_reports_csv(path: str | os.PathLike, rows: Sequence[tuple[str, str, EvalReport]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for algo, dataset, rep in rows:
            w.writerow([
                algo, dataset, rep.seed, rep.episodes,
                repr(rep.mean_return), repr(rep.std_error), repr(rep.normalized_score),
            ])


def read_reports_csv(path: str | os.PathLike) -> list[tuple[str, str, EvalReport]]:
    with open(path, newline="") as fh:
        return [
            (
                r["algorithm"], r["dataset"],
                EvalReport(int(r["episodes"]), float(r["mean_return"]), float(r["std_error"]),
                           float(r["normalized_score"]), int(r["seed"])),
            )
            for r in csv.DictReader(fh)
        ]


@dataclass
class SummaryTable:
    """Mean +/- SE of normalized scores per (dataset, algorithm) cell.

    A cell with no reports is ``None`` and rendered as ``missing``.
    """

    algorithms: list[str]
    datasets: list[str]
    cells: dict[tuple[str, str], tuple[float, float, int] | None]

    def rows(self) -> list[list[str]]:
        out = [["dataset"] + self.algorithms]
        for d in self.datasets:
            row = [d]
            for a in self.algorithms:
                cell = self.cells[(d, a)]
                row.append("missing" if cell is None else f"{cell[0]:.1f} ± {cell[1]:.1f}")
            out.append(row)
        return out

    def to_text(self) -> str:
        rows = self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join(
            "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip()
            for r in rows
        )

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "algorithm", "mean", "std_error", "seeds"])
            for d in self.datasets:
                for a in self.algorithms:
                    cell = self.cells[(d, a)]
                    if cell is None:
                        w.writerow([d, a, "", "", 0])
                    else:
                        w.writerow([d, a, repr(cell[0]), repr(cell[1]), cell[2]])

    @property
    def missing(self) -> list[tuple[str, str]]:
        return [k for k, v in self.cells.items() if v is None]


def summarize(
    reports: Sequence[tuple[str, str, EvalReport]],
    algorithms: Sequence[str] | None = None,
    datasets: Sequence[str] | None = None,
) -> SummaryTable:
    """Aggregate per-seed reports; orders default to first appearance."""
    algorithms = list(algorithms) if algorithms is not None else list(dict.fromkeys(a for a, _, _ in reports))
    datasets = list(datasets) if datasets is not None else list(dict.fromkeys(d for _, d, _ in reports))
    grouped: dict[tuple[str, str], list[float]] = {}
    for a, d, rep in reports:
        grouped.setdefault((d, a), []).append(rep.normalized_score)
    cells: dict[tuple[str, str], tuple[float, float, int] | None] = {}
    for d in datasets:
        for a in algorithms:
            vals = grouped.get((d, a))
            cells[(d, a)] = (*_mean_se(vals), len(vals)) if vals else None
    return SummaryTable(algorithms, datasets, cells)
