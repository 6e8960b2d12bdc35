"""Kernel backend selection.

The compiled extension is used when importable; set ``HIOBENCH_PURE=1`` to
force the pure-Python fallback.
"""

import os

if os.environ.get("HIOBENCH_PURE"):
    from . import _pykernels as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        from . import _pykernels as _impl

BACKEND: str = _impl.BACKEND
burn_ns = _impl.burn_ns
fill_payload = _impl.fill_payload

__all__ = ["BACKEND", "burn_ns", "fill_payload"]
