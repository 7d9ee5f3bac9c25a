"""Kernel lane selection.

The association hot path (pairwise gated IoU and the assignment solve)
exists twice: a compiled Cython extension and a NumPy/SciPy fallback.
The compiled lane is preferred when importable; ``VIALTRACK_KERNEL=python``
or ``VIALTRACK_KERNEL=native`` forces a lane.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _python


def _load_native() -> ModuleType | None:
    try:
        from . import _native
    except ImportError:
        return None
    return _native


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ('python', 'native' or None).

    With ``None`` the environment override applies, then the compiled
    lane if available, then the fallback.
    """
    if name is None:
        name = os.environ.get("VIALTRACK_KERNEL", "").strip().lower() or None
    if name in (None, "auto"):
        return _load_native() or _python
    if name in ("python", "numpy"):
        return _python
    if name == "native":
        native = _load_native()
        if native is None:
            raise ImportError("compiled kernel requested but not built")
        return native
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> tuple[str, ...]:
    names = ["python"]
    if _load_native() is not None:
        names.append("native")
    return tuple(names)


_active = get_backend()

BACKEND: str = _active.BACKEND
gated_scores = _active.gated_scores
solve_dense_max = _active.solve_dense_max
