"""Pure-Python (numpy) implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics; ``factored_rl.kernels`` picks one at import time.
"""

from __future__ import annotations

import numpy as np


def segment_max(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Row-wise maximum within each ``[offsets[i], offsets[i+1])`` column block."""
    n_dims = len(offsets) - 1
    out = np.empty((values.shape[0], n_dims))
    for i in range(n_dims):
        out[:, i] = values[:, offsets[i] : offsets[i + 1]].max(axis=1)
    return out


def segment_argmax(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Row-wise argmax within each column block; ties go to the lowest index."""
    n_dims = len(offsets) - 1
    out = np.empty((values.shape[0], n_dims), dtype=np.int64)
    for i in range(n_dims):
        out[:, i] = values[:, offsets[i] : offsets[i + 1]].argmax(axis=1)
    return out


def segment_logsumexp(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    n_dims = len(offsets) - 1
    out = np.empty((values.shape[0], n_dims))
    for i in range(n_dims):
        block = values[:, offsets[i] : offsets[i + 1]]
        m = block.max(axis=1)
        out[:, i] = m + np.log(np.exp(block - m[:, None]).sum(axis=1))
    return out


def masked_segment_max(
    values: np.ndarray, mask: np.ndarray, offsets: np.ndarray
) -> np.ndarray:
    """Block maximum over entries where ``mask`` is nonzero.

    Each block must contain at least one allowed entry.
    """
    masked = np.where(mask.astype(bool), values, -np.inf)
    return segment_max(masked, offsets)


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, cx, cy):
    return min(ax, bx) <= cx <= max(ax, bx) and min(ay, by) <= cy <= max(ay, by)


def segments_intersect(px, py, qx, qy, ax, ay, bx, by) -> bool:
    """Closed-segment intersection test (touching counts)."""
    d1 = _orient(ax, ay, bx, by, px, py)
    d2 = _orient(ax, ay, bx, by, qx, qy)
    d3 = _orient(px, py, qx, qy, ax, ay)
    d4 = _orient(px, py, qx, qy, bx, by)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(ax, ay, bx, by, px, py):
        return True
    if d2 == 0 and _on_segment(ax, ay, bx, by, qx, qy):
        return True
    if d3 == 0 and _on_segment(px, py, qx, qy, ax, ay):
        return True
    if d4 == 0 and _on_segment(px, py, qx, qy, bx, by):
        return True
    return False


def maze_move(
    x: float, y: float, dx: float, dy: float, walls: np.ndarray
) -> tuple[float, float, bool]:
    """Apply a displacement unless it leaves the unit square or touches a wall.

    Returns ``(new_x, new_y, blocked)``; a blocked move leaves the position as is.
    """
    nx = x + dx
    ny = y + dy
    if nx < 0.0 or nx > 1.0 or ny < 0.0 or ny > 1.0:
        return x, y, True
    for k in range(walls.shape[0]):
        ax, ay, bx, by = walls[k, 0], walls[k, 1], walls[k, 2], walls[k, 3]
        if segments_intersect(x, y, nx, ny, ax, ay, bx, by):
            return x, y, True
    return nx, ny, False


def pooled_max(
    uniforms: np.ndarray, n_in: int, half_width_in: float, half_width_out: float
) -> np.ndarray:
    """Maximum of a pooled sample built from raw U(0, 1) draws.

    Column ``j < n_in`` of each row is mapped to U(-half_width_in, half_width_in),
    the rest to U(-half_width_out, half_width_out).
    """
    rows, cols = uniforms.shape
    best = np.full(rows, -np.inf)
    if n_in > 0:
        best = np.maximum(best, ((2.0 * uniforms[:, :n_in] - 1.0) * half_width_in).max(axis=1))
    if n_in < cols:
        best = np.maximum(best, ((2.0 * uniforms[:, n_in:] - 1.0) * half_width_out).max(axis=1))
    return best
