"""Kernel backend selection: compiled extension when importable, numpy fallback.

Set ADVISOR_PURE_PYTHON=1 to force the fallback (used by the benchmark and
for debugging).
"""
from __future__ import annotations

import os

try:
    from . import _ekf_core  # noqa: F401

    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

_FORCE_PY = os.environ.get("ADVISOR_PURE_PYTHON", "").lower() in ("1", "true", "yes")


def default_backend() -> str:
    return "compiled" if HAVE_COMPILED and not _FORCE_PY else "python"


def resolve_backend(name: str | None) -> str:
    if name is None:
        return default_backend()
    if name not in ("compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "compiled" and not HAVE_COMPILED:
        raise RuntimeError("compiled kernel is not available in this installation")
    return name
