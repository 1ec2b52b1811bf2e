"""Selects the compiled flow kernels when available.

Setting ``LAB_PURE_PYTHON=1`` forces the NumPy implementation.
"""

from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
kernels = _fallback

if os.environ.get("LAB_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    else:
        kernels = _compiled
        BACKEND = "compiled"
else:
    _compiled = None


def get_kernels(name: str = "auto"):
    """Return a kernel module: ``"auto"``, ``"compiled"`` or ``"python"``."""
    if name == "auto":
        return kernels
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            try:
                from . import _kernels as mod
            except ImportError as exc:
                raise ImportError("the compiled flow kernels are not built") from exc
            return mod
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
