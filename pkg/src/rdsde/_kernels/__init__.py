"""Kernel backend selection.

Two interchangeable backends provide the banded linear algebra primitives:
a compiled Cython extension (``_core``) and a pure NumPy reference
(``_pyref``).  The compiled one also ships fused per-path time-stepping
drivers that the integrators use when the problem fits their supported
reaction/diffusion forms.

Selection happens at import time from the ``RDSDE_BACKEND`` environment
variable (``auto``, ``python`` or ``compiled``) and can be changed later with
``set_backend``; ``auto`` prefers the compiled backend when it imported.
"""
from __future__ import annotations

import os

from . import _pyref
from ._pyref import SingularMatrixError

try:
    from . import _core
except ImportError:
    _core = None

# fused-driver codes shared with the compiled extension
SCHEME_MARUYAMA = 0
SCHEME_IMEX = 1
REACTION_NONE = 0
REACTION_CUBIC = 1
REACTION_LAP_POLY = 2
REACTION_TWO_BLOCK = 3
REACTION_DIB = 4
REACTION_CUSTOM = 9
DIFFUSION_CONST = 0
DIFFUSION_LINEAR = 1
DIFFUSION_QUADRATIC = 2
DIFFUSION_CUSTOM = 9

_active = None


def compiled_available() -> bool:
    return _core is not None


def set_backend(name: str) -> None:
    """Select the kernel backend: 'auto', 'python' or 'compiled'."""
    global _active
    if name == "python":
        _active = _pyref
    elif name == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernels are not available; build the "
                               "extension with 'python setup.py build_ext --inplace'")
        _active = _core
    elif name == "auto":
        _active = _core if _core is not None else _pyref
    else:
        raise ValueError(f"unknown backend {name!r}: expected 'auto', 'python' or 'compiled'")


def backend_name() -> str:
    return _active.BACKEND_NAME


set_backend(os.environ.get("RDSDE_BACKEND", "auto"))


def band_matvec(bands, k, x):
    return _active.band_matvec(bands, k, x)


def band_lu_factor(bands, k, pivot_tol=None):
    return _active.band_lu_factor(bands, k, pivot_tol)


def band_lu_solve(ab, piv, k, b):
    return _active.band_lu_solve(ab, piv, k, b)


def default_pivot_tol(bands) -> float:
    return _pyref.default_pivot_tol(bands)


def fused_driver_available(scheme_code: int, reaction_code: int, diffusion_code: int) -> bool:
    """True when the active backend has a compiled whole-path driver for the combo."""
    if _active is not _core or _core is None:
        return False
    if diffusion_code not in (DIFFUSION_CONST, DIFFUSION_LINEAR, DIFFUSION_QUADRATIC):
        return False
    if scheme_code == SCHEME_IMEX:
        return reaction_code in (REACTION_NONE, REACTION_CUBIC, REACTION_LAP_POLY,
                                 REACTION_TWO_BLOCK, REACTION_DIB)
    # the Maruyama driver needs a narrow-banded Newton matrix
    return reaction_code in (REACTION_NONE, REACTION_CUBIC, REACTION_LAP_POLY,
                             REACTION_TWO_BLOCK)


def fused_run_path(*args, **kwargs) -> int:
    return _core.run_path(*args, **kwargs)
