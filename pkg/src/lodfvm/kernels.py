"""Sweep-kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``LODFVM_PURE_PYTHON`` is set to a non-empty value other than ``0``, the
numpy fallback is used.  Both expose ``forward_sweep``, ``backward_sweep``
and ``solve_batch`` with identical semantics.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def _forced_pure() -> bool:
    return os.environ.get("LODFVM_PURE_PYTHON", "") not in ("", "0")


def available() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module called ``name``, or the default one."""
    if name is None:
        return _pykernels if _forced_pure() or _compiled is None else _compiled
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


default: ModuleType = get_backend()
BACKEND: str = default.BACKEND
