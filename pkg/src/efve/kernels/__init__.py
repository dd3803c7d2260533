"""Kernel backend selection.

The compiled extension is preferred when importable; set EFVE_PURE_PYTHON=1
to force the numpy fallback (used by the parity tests and the benchmark).
Both expose the same three primitives: blur5, down2, up2.
"""

import os

from . import _pure

if os.environ.get("EFVE_PURE_PYTHON", "").strip().lower() in ("1", "true", "yes"):
    _impl = _pure
    IMPL = "numpy"
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]

        IMPL = "cython"
    except ImportError:
        _impl = _pure
        IMPL = "numpy"

blur5 = _impl.blur5
down2 = _impl.down2
up2 = _impl.up2

__all__ = ["blur5", "down2", "up2", "IMPL"]
