"""Hot-kernel dispatch.

The compiled extension ``_ckernels`` is used when it has been built; otherwise
the numpy fallback in ``_pykernels`` is used.  Setting the environment variable
``FACTORED_RL_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from factored_rl import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("FACTORED_RL_PURE_PYTHON"):
    try:
        from factored_rl import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

segment_max = _impl.segment_max
segment_argmax = _impl.segment_argmax
segment_logsumexp = _impl.segment_logsumexp
masked_segment_max = _impl.masked_segment_max
segments_intersect = _impl.segments_intersect
maze_move = _impl.maze_move
pooled_max = _impl.pooled_max


def backends() -> dict:
    """All importable kernel implementations, keyed by name."""
    found = {"python": _pykernels}
    try:
        from factored_rl import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
