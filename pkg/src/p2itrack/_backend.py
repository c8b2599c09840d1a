"""Kernel backend selection.

The compiled extension is preferred when present; the pure-numpy twin is
used otherwise or when ``P2ITRACK_BACKEND=python`` is set. Both expose
the same functions with the same numerics.
"""

import os

_forced = os.environ.get("P2ITRACK_BACKEND", "").strip().lower()

if _forced in {"python", "numpy", "py"}:
    from . import _kernels_py as kernels
    BACKEND = "python"
elif _forced in {"cython", "ext", "compiled"}:
    from . import _kernels as kernels  # noqa: F401  (raises if not built)
    BACKEND = "cython"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as kernels
        BACKEND = "python"


def backend_name() -> str:
    return BACKEND
