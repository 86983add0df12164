"""Backend selection for the EM hot kernel.

The compiled Cython backend is preferred when built; the numpy fallback
is used otherwise.  Set DCSSL_KERNELS=numpy or DCSSL_KERNELS=cython to
force a backend (forcing cython raises if the extension is missing).
"""

import os

_requested = os.environ.get("DCSSL_KERNELS", "auto").strip().lower()

if _requested in ("auto", ""):
    try:
        from . import _cy as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _np as _impl

        BACKEND = "numpy"
elif _requested in ("cython", "c"):
    from . import _cy as _impl

    BACKEND = "cython"
elif _requested in ("numpy", "python", "py"):
    from . import _np as _impl

    BACKEND = "numpy"
else:
    raise ValueError(f"unknown DCSSL_KERNELS value: {_requested!r}")

em_estep = _impl.em_estep

from ._np import EStepArrays  # noqa: E402  (shared result type)

__all__ = ["em_estep", "EStepArrays", "BACKEND"]
