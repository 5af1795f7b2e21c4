"""Loss families used for training.

Each loss object is called on a network output of shape ``(B, out_dim)`` and
returns ``(per_sample, grad)`` where ``grad`` is the derivative of
``per_sample.mean()`` with respect to the output.
"""

from __future__ import annotations

import numpy as np

from factored_rl import kernels
from factored_rl.decomp import ActionSpec, DecompMode, gather


def huber(pred, target, delta: float = 1.0):
    """0.5 u^2 inside ``|u| <= delta``, linear outside."""
    u = np.asarray(pred, dtype=np.float64) - target
    a = np.abs(u)
    out = np.where(a <= delta, 0.5 * u * u, delta * (a - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_grad(u: np.ndarray, delta: float = 1.0) -> np.ndarray:
    return np.clip(u, -delta, delta)


def expectile_loss(q, v, tau: float):
    """Asymmetric squared error ``|tau - 1(u < 0)| u^2`` with ``u = q - v``."""
    u = np.asarray(q, dtype=np.float64) - v
    out = np.abs(tau - (u < 0)) * u * u
    return float(out) if out.ndim == 0 else out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] == 0:
        raise ValueError("log_softmax of an empty array")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def segment_log_softmax(values: np.ndarray, spec: ActionSpec) -> np.ndarray:
    """Log-softmax applied independently within every dimension block."""
    lse = kernels.segment_logsumexp(values, spec.offsets)
    return values - np.repeat(lse, spec.n, axis=1)


def cql_penalty(values: np.ndarray, actions: np.ndarray, spec: ActionSpec, alpha: float) -> float:
    """Conservative penalty on utilities, averaged over dimensions and batch.

    ``alpha * mean_b (1/N) sum_i [logsumexp_j U^i(s_b, j) - U^i(s_b, a_i)]``
    """
    per_sample = _cql_per_sample(values, actions, spec)
    return float(alpha * per_sample.mean())


def _cql_per_sample(values, actions, spec):
    lse = kernels.segment_logsumexp(values, spec.offsets)
    return (lse - gather(values, actions, spec)).mean(axis=1)


class MSELoss:
    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)

    def __call__(self, out):
        u = out - self.target.reshape(out.shape)
        return (u * u).sum(axis=1), 2.0 * u / out.shape[0]


class HuberLoss:
    def __init__(self, target: np.ndarray, delta: float = 1.0):
        self.target = np.asarray(target, dtype=np.float64)
        self.delta = delta

    def __call__(self, out):
        u = out - self.target.reshape(out.shape)
        return huber(u, 0.0, self.delta).sum(axis=1), huber_grad(u, self.delta) / out.shape[0]


class ExpectileLoss:
    """Fits a scalar output ``v`` to the ``tau``-expectile of ``target``."""

    def __init__(self, target: np.ndarray, tau: float):
        if not 0.0 < tau < 1.0:
            raise ValueError("expectile tau must lie in (0, 1)")
        self.target = np.asarray(target, dtype=np.float64)
        self.tau = tau

    def __call__(self, out):
        v = out[:, 0]
        u = self.target - v
        weight = np.abs(self.tau - (u < 0))
        grad = np.zeros_like(out)
        grad[:, 0] = -2.0 * weight * u / out.shape[0]
        return weight * u * u, grad


class FactoredNLLLoss:
    """Behavioural cloning: ``(1/N) sum_i -log pi^i(a_i | s)`` from per-dimension logits."""

    def __init__(self, actions: np.ndarray, spec: ActionSpec):
        self.actions = np.asarray(actions, dtype=np.int64)
        self.spec = spec

    def __call__(self, out):
        spec = self.spec
        B = out.shape[0]
        logp = segment_log_softmax(out, spec)
        per_sample = -gather(logp, self.actions, spec).mean(axis=1)
        grad = np.exp(logp)
        rows = np.arange(B)[:, None]
        grad[rows, spec.offsets[:-1] + self.actions] -= 1.0
        grad /= B * spec.N
        return per_sample, grad


class DecomposedTDLoss:
    """Huber TD loss on decomposed Q-values, optionally CQL-augmented.

    In ``mean``/``sum`` mode ``targets`` has shape ``(B,)``; in ``independent``
    mode it is ``(B, N)`` and each utility regresses to its own target.
    ``cql_alpha=None`` skips the conservative term entirely; any number,
    including 0, evaluates it.
    """

    def __init__(
        self,
        actions: np.ndarray,
        targets: np.ndarray,
        spec: ActionSpec,
        mode: DecompMode | str = "mean",
        delta: float = 1.0,
        cql_alpha: float | None = None,
    ):
        self.actions = np.asarray(actions, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.spec = spec
        self.mode = DecompMode(mode)
        self.delta = delta
        self.cql_alpha = cql_alpha
        self.last_td = float("nan")
        self.last_penalty = 0.0

    def __call__(self, out):
        spec = self.spec
        B, N = out.shape[0], spec.N
        cols = spec.offsets[:-1] + self.actions
        rows = np.arange(B)[:, None]
        selected = out[rows, cols]
        grad = np.zeros_like(out)
        if self.mode is DecompMode.INDEPENDENT:
            u = selected - self.targets
            per_sample = huber(u, 0.0, self.delta).mean(axis=1)
            grad[rows, cols] = huber_grad(u, self.delta) / (B * N)
        else:
            if self.mode is DecompMode.MEAN:
                q, scale = selected.mean(axis=1), 1.0 / N
            else:
                q, scale = selected.sum(axis=1), 1.0
            u = q - self.targets
            per_sample = huber(u, 0.0, self.delta)
            grad[rows, cols] = (huber_grad(u, self.delta) * (scale / B))[:, None]
        self.last_td = float(per_sample.mean())
        if self.cql_alpha is not None:
            lse = kernels.segment_logsumexp(out, spec.offsets)
            pen = (lse - selected).mean(axis=1)
            probs = np.exp(out - np.repeat(lse, spec.n, axis=1))
            probs[rows, cols] -= 1.0
            grad += probs * (self.cql_alpha / (B * N))
            per_sample = per_sample + self.cql_alpha * pen
            self.last_penalty = float(self.cql_alpha * pen.mean())
        return per_sample, grad
