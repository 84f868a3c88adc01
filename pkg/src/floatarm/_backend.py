"""Kernel backend selection.

The compiled extension is used when it imports; otherwise (or when
``FLOATARM_PURE_PYTHON`` is set) the numpy kernels are used.
"""
from __future__ import annotations

import importlib
import os

from . import _kernels_py


def load(name: str):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        return importlib.import_module("floatarm._kernels")
    raise ValueError(f"unknown backend {name!r}")


def _select():
    if os.environ.get("FLOATARM_PURE_PYTHON"):
        return _kernels_py, "python"
    try:
        return load("compiled"), "compiled"
    except ImportError:
        return _kernels_py, "python"


kernels, BACKEND = _select()
