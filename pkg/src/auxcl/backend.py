"""Kernel backend selection.

Hot inner loops ship in two implementations: numba @njit loops and
vectorized pure numpy. The active path is chosen once at import from the
``AUXCL_NUMBA`` env var ("0" forces the numpy fallback) and can be
switched at runtime with :func:`set_backend` (used by tests and the
benchmark). Both paths are deterministic; they are not bit-identical to
each other because summation orders differ.
"""

from __future__ import annotations

import os

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    HAS_NUMBA = False

_env = os.environ.get("AUXCL_NUMBA", "1").strip()
_active = "numba" if (HAS_NUMBA and _env != "0") else "numpy"


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not installed")
    _active = name


def using_numba() -> bool:
    return _active == "numba"
