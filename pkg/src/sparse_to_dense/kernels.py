"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``SPARSE_TO_DENSE_KERNELS=python`` to force the fallback.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from types import ModuleType

from . import _fallback


def _load() -> tuple[ModuleType, str]:
    if os.environ.get("SPARSE_TO_DENSE_KERNELS", "").lower() == "python":
        return _fallback, "python"
    try:
        from . import _kernels
    except ImportError:
        return _fallback, "python"
    return _kernels, "cython"


_impl, BACKEND = _load()

linear = _impl.linear
rmsnorm = _impl.rmsnorm
attend = _impl.attend


def get_backend(name: str) -> ModuleType:
    """Return a specific backend module by name (``"cython"`` or ``"python"``)."""
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


@contextmanager
def use_backend(name: str):
    """Temporarily route ``linear``/``rmsnorm``/``attend`` through one backend."""
    global linear, rmsnorm, attend, BACKEND
    saved = (linear, rmsnorm, attend, BACKEND)
    impl = get_backend(name)
    linear, rmsnorm, attend, BACKEND = impl.linear, impl.rmsnorm, impl.attend, name
    try:
        yield impl
    finally:
        linear, rmsnorm, attend, BACKEND = saved
