"""Pick the kernel backend at import time.

The compiled extension is used when it was built; ``MUON8_BACKEND=python``
forces the numpy fallback, ``MUON8_BACKEND=cython`` makes a missing
extension an import error.
"""
import os

from . import _pycore

_requested = os.environ.get("MUON8_BACKEND", "auto").lower()

if _requested == "python":
    kernels = _pycore
else:
    try:
        from . import _core as kernels  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _pycore

BACKEND = kernels.BACKEND
BACKENDS = {"python": _pycore}
if BACKEND == "cython":
    BACKENDS["cython"] = kernels


def thread_cap() -> int:
    """Worker cap from ``MUON8_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("MUON8_THREADS", "1")))
    except ValueError:
        return 1
