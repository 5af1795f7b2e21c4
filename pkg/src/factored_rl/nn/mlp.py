"""Fully connected ReLU networks with hand-written reverse mode.

Parameters of one network live in a single contiguous float64 buffer
(``flat``) laid out as ``[W0, b0, W1, b1, ...]``; ``weights`` and ``biases``
are views into it.  This keeps optimiser and target-network updates to a
handful of vector operations regardless of depth.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from factored_rl.errors import DimensionError, TrainingDivergence

# A loss maps network output (B, out_dim) to (per-sample losses (B,), d mean / d output).
LossFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


class NetParams:
    """Weights and biases of an MLP, stored as views into one flat buffer.

    Weight matrices are ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
    """

    def __init__(self, sizes: Sequence[int], flat: np.ndarray | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise DimensionError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        total = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        if flat is None:
            flat = np.zeros(total)
        elif flat.shape != (total,):
            raise DimensionError(f"flat buffer has shape {flat.shape}, expected ({total},)")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        pos = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out))
            pos += fan_in * fan_out
            self.biases.append(flat[pos : pos + fan_out])
            pos += fan_out

    @property
    def layer_count(self) -> int:
        """Number of hidden layers."""
        return len(self.sizes) - 2

    @property
    def hidden_width(self) -> int:
        return self.sizes[1] if self.layer_count else 0

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def copy(self):
        return type(self)(self.sizes, self.flat.copy())

    def zeros_like(self):
        return type(self)(self.sizes)

    def arrays(self) -> list[np.ndarray]:
        """Per-layer arrays in storage order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, NetParams)
            and self.sizes == other.sizes
            and np.array_equal(self.flat, other.flat)
        )

    def __repr__(self) -> str:
        return f"{type(self).__name__}(sizes={self.sizes})"


class GradBundle(NetParams):
    """Gradients with exactly the layout of the parameters they belong to."""


def init_mlp(
    in_dim: int,
    out_dim: int,
    hidden_width: int = 512,
    hidden_layers: int = 2,
    rng: np.random.Generator | None = None,
) -> NetParams:
    """Kaiming-uniform hidden layers, U(+-1/sqrt(fan_in)) output layer, zero biases."""
    rng = np.random.default_rng() if rng is None else rng
    sizes = [in_dim] + [hidden_width] * hidden_layers + [out_dim]
    params = NetParams(sizes)
    last = len(params.weights) - 1
    for idx, w in enumerate(params.weights):
        fan_in = w.shape[0]
        bound = 1.0 / np.sqrt(fan_in) if idx == last else np.sqrt(6.0 / fan_in)
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _check_input(params: NetParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.in_dim:
        raise DimensionError(
            f"input of shape {x.shape} does not match network input dim {params.in_dim}"
        )
    return x


def forward(params: NetParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    h = _check_input(params, x)
    last = len(params.weights) - 1
    for idx, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if idx < last:
            np.maximum(h, 0.0, out=h)
    return h


def forward_cached(params: NetParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass on a batch that also returns each layer's input for backprop."""
    h = _check_input(params, x)
    if h.ndim == 1:
        h = h[None, :]
    inputs = []
    last = len(params.weights) - 1
    for idx, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        h = h @ w + b
        if idx < last:
            np.maximum(h, 0.0, out=h)
    return h, inputs


def backprop(
    params: NetParams,
    inputs: list[np.ndarray],
    grad_out: np.ndarray,
    out: GradBundle | None = None,
) -> GradBundle:
    """Reverse pass given d loss / d output; writes into ``out`` if provided."""
    grads = GradBundle(params.sizes) if out is None else out
    g = grad_out
    for idx in range(len(params.weights) - 1, -1, -1):
        np.matmul(inputs[idx].T, g, out=grads.weights[idx])
        np.sum(g, axis=0, out=grads.biases[idx])
        if idx > 0:
            g = g @ params.weights[idx].T
            # layer input is post-ReLU, so it is positive exactly where the unit was active
            g *= inputs[idx] > 0.0
    return grads


def backward(
    params: NetParams,
    batch_inputs: np.ndarray,
    loss: LossFn,
    out: GradBundle | None = None,
) -> tuple[float, GradBundle]:
    """Batch-mean loss and its exact gradient with respect to ``params``.

    Raises ``TrainingDivergence`` carrying the first offending row if any
    per-sample loss is non-finite.
    """
    batch_inputs = np.asarray(batch_inputs, dtype=np.float64)
    if batch_inputs.ndim != 2 or batch_inputs.shape[0] == 0:
        raise ValueError("backward needs a non-empty 2-D batch")
    output, inputs = forward_cached(params, batch_inputs)
    per_sample, grad_out = loss(output)
    bad = ~np.isfinite(per_sample)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise TrainingDivergence(f"non-finite loss at batch row {row}", batch_index=row)
    value = float(per_sample.mean())
    return value, backprop(params, inputs, grad_out, out)
