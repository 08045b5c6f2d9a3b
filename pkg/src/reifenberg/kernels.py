"""Backend selection for the grid kernels.

The compiled extension is used when it imports; ``REIFENBERG_PURE=1`` forces
the numpy fallback. ``BACKEND`` names the active one.
"""
import os

from . import _fallback

if os.environ.get("REIFENBERG_PURE", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

query_ball = _impl.query_ball
ball_sums = _impl.ball_sums
ball_moments = _impl.ball_moments
ball_residuals = _impl.ball_residuals
sigma_eval = _impl.sigma_eval
ball_newton = _impl.ball_newton


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _fallback}
    try:
        from . import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
