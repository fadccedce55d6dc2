"""Kernel backend selection.

The compiled extension is used when it imports; ``SIGMAQ_BACKEND=python``
forces the numpy fallback. Both expose the same functions.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _fallback


def _load() -> ModuleType:
    if os.environ.get("SIGMAQ_BACKEND", "").lower() == "python":
        return _fallback
    try:
        from . import _kernels
    except ImportError:
        return _fallback
    return _kernels


kernels: ModuleType = _load()
BACKEND: str = kernels.BACKEND


def use(name: str) -> ModuleType:
    """Switch backend at runtime (``"cython"`` or ``"python"``); used by tests and benchmarks."""
    global kernels, BACKEND
    if name == "python":
        kernels = _fallback
    elif name == "cython":
        from . import _kernels

        kernels = _kernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = kernels.BACKEND
    return kernels


def available() -> list[str]:
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return names
    return ["cython", *names]
