"""Adam, gradient clipping and Polyak target updates on flat parameter buffers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from factored_rl.errors import DimensionError, TrainingDivergence
from factored_rl.nn.mlp import GradBundle, NetParams


@dataclass
class AdamState:
    first_moment: NetParams
    second_moment: NetParams
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetParams, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState(
            self.first_moment.copy(), self.second_moment.copy(),
            self.step_count, self.beta1, self.beta2, self.eps,
        )


def _check_shapes(a: NetParams, b: NetParams) -> None:
    if a.sizes != b.sizes:
        raise DimensionError(f"layer sizes differ: {a.sizes} vs {b.sizes}")


def adam_step(
    params: NetParams, grads: GradBundle, state: AdamState, learning_rate: float
) -> tuple[NetParams, AdamState]:
    """One bias-corrected Adam update, applied in place.

    A non-finite gradient is refused before anything is modified.
    """
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    _check_shapes(params, grads)
    _check_shapes(params, state.first_moment)
    g = grads.flat
    if not np.isfinite(g).all():
        raise TrainingDivergence("non-finite gradient; Adam update refused")
    state.step_count += 1
    t = state.step_count
    m = state.first_moment.flat
    v = state.second_moment.flat
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)
    step = learning_rate / (1.0 - state.beta1**t)
    denom = np.sqrt(v / (1.0 - state.beta2**t))
    denom += state.eps
    params.flat -= step * m / denom
    return params, state


def polyak(target: NetParams, online: NetParams, mu: float) -> NetParams:
    """Move ``target`` toward ``online`` by a fraction ``mu`` (in place)."""
    if not 0.0 < mu <= 1.0:
        raise ValueError("mu must lie in (0, 1]")
    _check_shapes(target, online)
    if mu == 1.0:
        target.flat[...] = online.flat
    else:
        # t + mu (o - t) keeps target == online a fixed point exactly
        target.flat += mu * (online.flat - target.flat)
    return target


def global_norm(grads: NetParams) -> float:
    return float(np.sqrt(np.dot(grads.flat, grads.flat)))


def clip_global_norm(grads: GradBundle, max_norm: float) -> GradBundle:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        grads.flat *= max_norm / norm
    return grads
