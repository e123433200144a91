"""Kernel selection: compiled extension when built, numpy fallback otherwise.

Set CONVRAG_PURE_PYTHON=1 to force the fallback (used by the benchmark to
compare both paths in one process).
"""

import os

if os.environ.get("CONVRAG_PURE_PYTHON") == "1":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

add_term_scores = _impl.add_term_scores


def kernel_backend() -> str:
    """Which kernel implementation is active: "cython" or "python"."""
    return _impl.KERNEL_NAME
