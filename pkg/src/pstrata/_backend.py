"""Kernel backend selection.

Set ``PSTRATA_BACKEND=numpy`` to force the vectorized numpy kernels; the
default is numba when it imports cleanly.
"""
import os

_requested = os.environ.get("PSTRATA_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"PSTRATA_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        import numba  # noqa: F401
        BACKEND = "numba"
    except ImportError:  # pragma: no cover
        BACKEND = "numpy"
else:
    BACKEND = "numpy"
