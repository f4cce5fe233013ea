"""Kernel backend selection: compiled extension if available, numpy fallback.

Set ICP_PURE_KERNELS=1 to force the fallback (the setting is read at import,
so it propagates to forked worker processes).  ``use()`` switches the active
backend in-process; the kernel benchmark relies on that.
"""

from __future__ import annotations

import os

from . import _kernels_py

_IMPLS = {"pure": _kernels_py}
try:
    from . import _kernels as _kernels_c

    _IMPLS["compiled"] = _kernels_c
except ImportError:
    _kernels_c = None

if os.environ.get("ICP_PURE_KERNELS") == "1" or _kernels_c is None:
    _active_name = "pure"
else:
    _active_name = "compiled"


def available() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def backend_name() -> str:
    return _active_name


def kernels():
    return _IMPLS[_active_name]


def get(name: str):
    if name not in _IMPLS:
        raise ValueError(f"kernel backend {name!r} not available (have {available()})")
    return _IMPLS[name]


def use(name: str) -> str:
    """Switch the active backend; returns the previous name."""
    global _active_name
    if name not in _IMPLS:
        raise ValueError(f"kernel backend {name!r} not available (have {available()})")
    prev = _active_name
    _active_name = name
    return prev
