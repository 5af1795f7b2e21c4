"""Value decomposition over factorised action spaces.

Utilities for all sub-action dimensions are stored side by side in one row of
length ``sum(n_i)``; ``ActionSpec.offsets`` marks where each dimension's block
starts.  Batched functions take ``(B, sum(n_i))`` arrays, the single-state
helpers accept either a flat row or a list of per-dimension arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from factored_rl import kernels
from factored_rl.errors import DimensionError, UnsupportedModeError


class DecompMode(str, Enum):
    MEAN = "mean"
    SUM = "sum"
    INDEPENDENT = "independent"


@dataclass(frozen=True)
class ActionSpec:
    """Sub-action counts ``n`` for each of the ``N`` action dimensions."""

    n: tuple[int, ...]
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __init__(self, n: Sequence[int]):
        n = tuple(int(k) for k in n)
        if not n or min(n) < 1:
            raise DimensionError(f"every dimension needs at least one sub-action, got {n}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(n)]).astype(np.int64))

    @classmethod
    def uniform(cls, dims: int, per_dim: int) -> "ActionSpec":
        return cls([per_dim] * dims)

    @property
    def N(self) -> int:
        return len(self.n)

    @property
    def total_utilities(self) -> int:
        return int(self.offsets[-1])

    @property
    def atomic_count(self) -> int:
        return math.prod(self.n)

    @property
    def factored_count(self) -> int:
        return sum(self.n)

    def validate(self, action: Sequence[int]) -> np.ndarray:
        a = np.asarray(action)
        if a.shape != (self.N,):
            raise DimensionError(f"action has shape {a.shape}, expected ({self.N},)")
        for i, (ai, ni) in enumerate(zip(a, self.n)):
            if not 0 <= ai < ni:
                raise DimensionError(f"sub-action {ai} out of range [0, {ni}) in dimension {i}")
        return a.astype(np.int64)

    def split(self, row: np.ndarray) -> list[np.ndarray]:
        """Per-dimension views of a flat utility row."""
        return [row[..., self.offsets[i] : self.offsets[i + 1]] for i in range(self.N)]

    def flatten(self, per_dim: Sequence[Sequence[float]]) -> np.ndarray:
        if len(per_dim) != self.N or any(len(u) != k for u, k in zip(per_dim, self.n)):
            raise DimensionError("utility lists do not match the action spec")
        return np.concatenate([np.asarray(u, dtype=np.float64) for u in per_dim])

    def atomic_actions(self) -> np.ndarray:
        """Every global action as rows of an ``(prod n_i, N)`` array."""
        grids = np.meshgrid(*[np.arange(k) for k in self.n], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def spec_of(utilities: Sequence[Sequence[float]]) -> ActionSpec:
    return ActionSpec([len(u) for u in utilities])


def _as_row(utilities, spec: ActionSpec | None) -> tuple[np.ndarray, ActionSpec]:
    if spec is None:
        spec = spec_of(utilities)
        return spec.flatten(utilities), spec
    row = np.asarray(utilities, dtype=np.float64)
    if row.shape[-1] != spec.total_utilities:
        raise DimensionError("utility row does not match the action spec")
    return row, spec


def action_counts(spec: ActionSpec) -> tuple[int, int]:
    """Number of atomic actions and of per-dimension utilities (exact integers)."""
    return spec.atomic_count, spec.factored_count


def aggregate(selected: np.ndarray, mode: DecompMode | str) -> np.ndarray:
    """Combine selected utilities ``(..., N)`` into a global value."""
    mode = DecompMode(mode)
    if mode is DecompMode.MEAN:
        return selected.mean(axis=-1)
    if mode is DecompMode.SUM:
        return selected.sum(axis=-1)
    raise UnsupportedModeError("independent mode has no global Q-value")


def gather(values: np.ndarray, actions: np.ndarray, spec: ActionSpec) -> np.ndarray:
    """Pick ``U^i(s, a_i)`` for each row: ``(B, sum n) x (B, N) -> (B, N)``."""
    rows = np.arange(values.shape[0])[:, None]
    return values[rows, spec.offsets[:-1] + actions]


def q_value(utilities, action: Sequence[int], mode: DecompMode | str = "mean", spec=None) -> float:
    row, spec = _as_row(utilities, spec)
    a = spec.validate(action)
    return float(aggregate(row[spec.offsets[:-1] + a], mode))


def q_values(values: np.ndarray, actions: np.ndarray, spec: ActionSpec, mode="mean") -> np.ndarray:
    return aggregate(gather(values, actions, spec), mode)


def greedy_action(utilities, spec: ActionSpec | None = None) -> np.ndarray:
    """Per-dimension argmax, lowest index on ties."""
    row, spec = _as_row(utilities, spec)
    return kernels.segment_argmax(np.atleast_2d(row), spec.offsets)[0]


def greedy_actions(values: np.ndarray, spec: ActionSpec) -> np.ndarray:
    return kernels.segment_argmax(values, spec.offsets)


def decqn_targets(
    rewards: np.ndarray,
    next_values: np.ndarray,
    gamma: float,
    terminals: np.ndarray,
    spec: ActionSpec,
    mode: DecompMode | str = "mean",
) -> np.ndarray:
    """Batched bootstrap targets from target-network utilities at the next state."""
    maxima = kernels.segment_max(next_values, spec.offsets)
    boot = aggregate(maxima, mode)
    return rewards + gamma * (1.0 - terminals) * boot


def decqn_target(
    reward: float,
    next_utilities_target,
    gamma: float,
    mode: DecompMode | str = "mean",
    terminal: bool = False,
    spec: ActionSpec | None = None,
) -> float:
    row, spec = _as_row(next_utilities_target, spec)
    y = decqn_targets(
        np.array([reward], dtype=np.float64), np.atleast_2d(row), gamma,
        np.array([float(terminal)]), spec, mode,
    )
    return float(y[0])


def bdq_targets(
    reward: float,
    next_utilities_target,
    gamma: float,
    terminal: bool = False,
    spec: ActionSpec | None = None,
) -> np.ndarray:
    """Independent per-dimension targets ``r + gamma * max U^i``."""
    row, spec = _as_row(next_utilities_target, spec)
    return bdq_targets_batch(
        np.array([reward], dtype=np.float64), np.atleast_2d(row), gamma,
        np.array([float(terminal)]), spec,
    )[0]


def bdq_targets_batch(rewards, next_values, gamma, terminals, spec: ActionSpec) -> np.ndarray:
    maxima = kernels.segment_max(next_values, spec.offsets)
    return rewards[:, None] + gamma * (1.0 - terminals)[:, None] * maxima
