"""Overestimation-bias simulator for atomic (DQN) vs decomposed (DecQN) targets.

Value-estimate errors are modelled as uniform noise: U(-b, b) for
in-distribution actions and U(-kb, kb) for out-of-distribution ones.  For each
coverage level ``|A_in|`` the simulator estimates the mean and variance of the
target difference Z (gamma times the max of the noise for DQN, gamma times the
mean over dimensions of per-dimension maxima for DecQN).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from factored_rl import kernels
from factored_rl.decomp import ActionSpec
from factored_rl.errors import ConfigError


def closed_form_mean(card: int, b: float, gamma: float) -> float:
    """E[Z] for the max of ``card`` i.i.d. U(-b, b) errors, scaled by gamma."""
    if card < 1:
        raise ValueError("card must be >= 1")
    return gamma * b * (card - 1) / (card + 1)


def closed_form_var(card: int, b: float, gamma: float) -> float:
    """Var(Z) for the max of ``card`` i.i.d. U(-b, b) errors.

    gamma multiplies linearly, matching the published formula; with gamma=1
    this coincides with the variance of the maximum itself.
    """
    if card < 1:
        raise ValueError("card must be >= 1")
    return gamma * 4.0 * b * b * card / ((card + 1) ** 2 * (card + 2))


@dataclass(frozen=True)
class NoiseSimConfig:
    spec: ActionSpec
    b: float = 1.0
    k: float = 2.0
    gamma: float = 1.0
    inner_reps: int = 10_000
    outer_reps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.b <= 0:
            raise ConfigError("b must be positive")
        if self.k <= 1:
            raise ConfigError("k must exceed 1")
        if self.inner_reps < 1 or self.outer_reps < 1:
            raise ConfigError("inner_reps and outer_reps must be >= 1")


@dataclass
class SimCurve:
    """Per-coverage estimates; index ``m`` of every array is ``|A_in| = m``."""

    mean: np.ndarray
    var: np.ndarray
    se_mean: np.ndarray
    se_var: np.ndarray

    def __len__(self) -> int:
        return len(self.mean)

    @property
    def coverage(self) -> np.ndarray:
        return np.arange(len(self.mean))


def _moments(z: np.ndarray) -> tuple[float, float, float, float]:
    n = z.size
    mean = float(z.mean())
    dev2 = (z - mean) ** 2
    var = float(dev2.mean())
    se_mean = math.sqrt(var / n)
    se_var = math.sqrt(max(float((dev2 * dev2).mean()) - var * var, 0.0) / n)
    return mean, var, se_mean, se_var


def simulate_dqn(config: NoiseSimConfig) -> SimCurve:
    """Pooled-max simulation over the full atomic action set."""
    total = config.spec.atomic_count
    b, kb = config.b, config.k * config.b
    out = np.zeros((4, total + 1))
    for m in range(total + 1):
        rng = np.random.default_rng([config.seed, 0, m])
        u = rng.random((config.inner_reps, total))
        z = config.gamma * kernels.pooled_max(u, m, b, kb)
        out[:, m] = _moments(z)
    return SimCurve(*out)


def _cluster_se(values: np.ndarray, center: float) -> float:
    """Cluster-robust standard error of a pooled mean; rows are clusters."""
    clusters, per = values.shape
    resid = (values - center).sum(axis=1)
    n = clusters * per
    if clusters < 2:
        return math.sqrt(float(((values - center) ** 2).mean()) / n)
    return math.sqrt(clusters / (clusters - 1) * float((resid * resid).sum())) / n


def simulate_decqn(config: NoiseSimConfig) -> SimCurve:
    """Mean of per-dimension maxima with in-distribution sets induced by atomic coverage.

    For each coverage ``m`` and each outer repetition, ``m`` atomic actions
    are drawn without replacement; a sub-action is in-distribution for its
    dimension when it appears in any drawn atomic action.  Samples are
    pooled over outer x inner draws; standard errors treat each outer
    repetition as a cluster.
    """
    spec = config.spec
    atoms = spec.atomic_actions()
    total = len(atoms)
    b, kb = config.b, config.k * config.b
    inner = config.inner_reps
    out = np.zeros((4, total + 1))
    for m in range(total + 1):
        z = np.empty((config.outer_reps, inner))
        for rep in range(config.outer_reps):
            rng = np.random.default_rng([config.seed, 1, m, rep])
            chosen = atoms[rng.choice(total, size=m, replace=False)] if m else atoms[:0]
            acc = np.zeros(inner)
            for i, n_i in enumerate(spec.n):
                m_i = len(np.unique(chosen[:, i]))
                acc += kernels.pooled_max(rng.random((inner, n_i)), m_i, b, kb)
            z[rep] = config.gamma * acc / spec.N
        mean = float(z.mean())
        dev2 = (z - mean) ** 2
        var = float(dev2.mean())
        out[:, m] = (mean, var, _cluster_se(z, mean), _cluster_se(dev2, var))
    return SimCurve(*out)


CSV_COLUMNS = (
    "a_in", "mean_dqn", "var_dqn", "se_mean_dqn", "se_var_dqn",
    "mean_dec", "var_dec", "se_mean_dec", "se_var_dec",
)


def write_curves_csv(path: str | os.PathLike, dqn: SimCurve, dec: SimCurve) -> None:
    if len(dqn) != len(dec):
        raise ValueError("curves cover different coverage ranges")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for m in range(len(dqn)):
            w.writerow([m] + [repr(float(a[m])) for c in (dqn, dec) for a in (c.mean, c.var, c.se_mean, c.se_var)])


def read_curves_csv(path: str | os.PathLike) -> tuple[SimCurve, SimCurve]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    col = lambda name: np.array([float(r[name]) for r in rows])  # noqa: E731
    dqn = SimCurve(col("mean_dqn"), col("var_dqn"), col("se_mean_dqn"), col("se_var_dqn"))
    dec = SimCurve(col("mean_dec"), col("var_dec"), col("se_mean_dec"), col("se_var_dec"))
    return dqn, dec
