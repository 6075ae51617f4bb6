"""Kernel selection: compiled Cython core if importable, NumPy otherwise.

Set ``TAILBENCH_BACKEND=python`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
sgd_block = _fallback.sgd_block
em_steps = _fallback.em_steps

if os.environ.get("TAILBENCH_BACKEND", "").lower() != "python":
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        sgd_block = _kernels.sgd_block
        em_steps = _kernels.em_steps


def get(name, backend=None):
    """Return kernel ``name`` from an explicit backend ("cython"/"python")."""
    if backend is None:
        return globals()[name]
    if backend == "python":
        return getattr(_fallback, name)
    if backend == "cython":
        from . import _kernels
        return getattr(_kernels, name)
    raise ValueError(f"unknown backend {backend!r}")


def workers():
    """Worker budget from ``TAILBENCH_WORKERS`` (default: 1)."""
    raw = os.environ.get("TAILBENCH_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
