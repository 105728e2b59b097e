"""Kernel backend selection.

Prefers the compiled extension (``apcd._core``); falls back to the numpy
kernels when the extension is missing or ``APCD_BACKEND=python`` is set.
"""

import os

from . import _kernels_py

if os.environ.get("APCD_BACKEND", "").lower() == "python":
    kernels = _kernels_py
else:
    try:
        from . import _core as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

BACKEND = kernels.BACKEND_NAME


def get_kernels(backend: str | None = None):
    """Kernel module for an explicit backend name (used by the benchmark)."""
    if backend in (None, "auto"):
        return kernels
    if backend == "python":
        return _kernels_py
    if backend == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {backend!r}")
