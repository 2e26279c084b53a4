"""Kernel backend selection.

The batch cascade has two interchangeable implementations: a numba JIT
kernel (default when numba imports cleanly) and a vectorized pure-numpy
fallback.  Selection order: explicit argument, then the ``CADS_BACKEND``
environment variable (``numba`` or ``numpy``), then auto-detection.
``benchmarks/benchmark_backends.py`` compares the two.
"""

from __future__ import annotations

import os
import warnings

from . import kernels_numpy

_ENV_VAR = "CADS_BACKEND"
_numba_error: Exception | None = None

try:
    from . import kernels_numba
except Exception as exc:  # pragma: no cover - depends on environment
    kernels_numba = None
    _numba_error = exc


def available_backends() -> tuple[str, ...]:
    return ("numba", "numpy") if kernels_numba is not None else ("numpy",)


def default_backend() -> str:
    env = os.environ.get(_ENV_VAR, "").strip().lower()
    if env:
        if env not in ("numba", "numpy"):
            raise ValueError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {env!r}")
        if env == "numba" and kernels_numba is None:
            warnings.warn(
                f"{_ENV_VAR}=numba requested but numba is unavailable "
                f"({_numba_error}); falling back to numpy",
                RuntimeWarning,
                stacklevel=2,
            )
            return "numpy"
        return env
    return "numba" if kernels_numba is not None else "numpy"


def get_cascade_batch(backend: str | None = None):
    """Return the batch kernel for the requested (or default) backend."""
    name = backend or default_backend()
    if name == "numpy":
        return kernels_numpy.cascade_batch
    if name == "numba":
        if kernels_numba is None:
            raise RuntimeError(f"numba backend unavailable: {_numba_error}")
        return kernels_numba.cascade_batch
    raise ValueError(f"unknown backend {name!r}")
