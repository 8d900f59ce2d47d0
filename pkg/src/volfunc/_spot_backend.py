"""Backend dispatch for the compute-heavy kernels.

At import time the compiled extension (``_spot_core``) is preferred;
when it is unavailable (no compiler at install time) the pure-numpy
implementation is used.  ``BACKEND`` records which one won.  Callers
that need a specific engine (tests, benchmarks) use ``get_backend``.
"""
from __future__ import annotations

from types import ModuleType

from . import _spot_numpy

try:  # pragma: no cover - exercised only when the extension is missing
    from . import _spot_core

    _DEFAULT: ModuleType = _spot_core
    BACKEND = "compiled"
except ImportError:  # pragma: no cover
    _spot_core = None
    _DEFAULT = _spot_numpy
    BACKEND = "numpy"


def get_backend(engine: str | None = None) -> ModuleType:
    """Resolve an engine name to a backend module.

    Parameters
    ----------
    engine : {None, "compiled", "numpy"}
        ``None`` selects the default (compiled when available).

    Raises
    ------
    ValueError
        If the name is unknown or the compiled backend was requested but
        is not available in this installation.
    """
    if engine is None:
        return _DEFAULT
    if engine == "numpy":
        return _spot_numpy
    if engine == "compiled":
        if _spot_core is None:
            raise ValueError("compiled backend requested but the extension is not available")
        return _spot_core
    raise ValueError(f"unknown engine {engine!r}: expected 'compiled' or 'numpy'")
