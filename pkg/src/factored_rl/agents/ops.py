"""Per-algorithm target and policy-extraction pieces.

Single-state helpers take per-dimension sequences (``[U^1, ..., U^N]``);
the ``*_batch`` variants work on flat ``(B, sum n_i)`` rows and are what the
training loop calls.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from factored_rl import kernels
from factored_rl.decomp import ActionSpec, DecompMode, aggregate, gather, spec_of
from factored_rl.nn.losses import cql_penalty, expectile_loss  # noqa: F401  (re-exported)


def _rows(per_dim: Sequence[Sequence[float]]) -> tuple[np.ndarray, ActionSpec]:
    spec = spec_of(per_dim)
    return spec.flatten(per_dim)[None, :], spec


def segment_sum(values: np.ndarray, spec: ActionSpec) -> np.ndarray:
    return np.add.reduceat(values, spec.offsets[:-1], axis=1)


def bcq_allowed_batch(probs: np.ndarray, spec: ActionSpec, tau: float) -> np.ndarray:
    """Mask of sub-actions whose probability relative to the block maximum is >= tau."""
    peak = np.repeat(kernels.segment_max(probs, spec.offsets), spec.n, axis=1)
    return probs / peak >= tau


def bcq_allowed(policy_probs: Sequence[float], tau: float) -> np.ndarray:
    p = np.asarray(policy_probs, dtype=np.float64)
    if (p < 0).any() or p.max() <= 0:
        raise ValueError("probabilities must be non-negative with a positive maximum")
    return p / p.max() >= tau


def bcq_targets_batch(
    rewards, next_values, next_probs, gamma, tau, terminals, spec: ActionSpec, mode="mean"
) -> np.ndarray:
    mask = bcq_allowed_batch(next_probs, spec, tau)
    maxima = kernels.masked_segment_max(next_values, mask, spec.offsets)
    not_done = gamma * (1.0 - terminals)
    if DecompMode(mode) is DecompMode.INDEPENDENT:
        return rewards[:, None] + not_done[:, None] * maxima
    return rewards + not_done * aggregate(maxima, mode)


def bcq_target(r, next_utilities_target, next_policy_probs, gamma, tau, terminal=False) -> float:
    """Bootstrap only from sub-actions the cloned policy considers likely enough."""
    values, spec = _rows(next_utilities_target)
    probs = spec.flatten(next_policy_probs)[None, :]
    y = bcq_targets_batch(
        np.array([float(r)]), values, probs, gamma, tau, np.array([float(terminal)]), spec
    )
    return float(y[0])


def onestep_values_batch(probs: np.ndarray, values: np.ndarray, spec: ActionSpec, mode="mean") -> np.ndarray:
    """Expected decomposed value under a factorised policy, per row."""
    per_dim = segment_sum(probs * values, spec)
    return aggregate(per_dim, mode)


def onestep_value(policy_probs, target_utilities) -> float:
    """``(1/N) sum_i sum_j pi^i(j) U^i(j)``."""
    values, spec = _rows(target_utilities)
    probs = spec.flatten(policy_probs)[None, :]
    return float(onestep_values_batch(probs, values, spec)[0])


def iql_extract_batch(advantages, log_pi, lam: float, spec: ActionSpec) -> np.ndarray:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return kernels.segment_argmax(advantages / lam + log_pi, spec.offsets)


def iql_extract(advantages, log_pi, lam: float) -> np.ndarray:
    """Per-dimension argmax of ``A / lambda + log pi``; lowest index on ties."""
    adv, spec = _rows(advantages)
    lp = spec.flatten(log_pi)[None, :]
    return iql_extract_batch(adv, lp, lam, spec)[0]


def bc_loss(log_pi, actions: np.ndarray, spec: ActionSpec | None = None) -> float:
    """Mean over the batch of ``(1/N) sum_i -log pi^i(a_i | s)``.

    ``log_pi`` is either a flat ``(B, sum n_i)`` array together with ``spec``,
    or a list of per-dimension ``(B, n_i)`` arrays.
    """
    if spec is None:
        blocks = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in log_pi]
        spec = ActionSpec([b.shape[1] for b in blocks])
        log_pi = np.concatenate(blocks, axis=1)
    return float(-gather(np.atleast_2d(log_pi), np.atleast_2d(actions), spec).mean())
