"""Pure NumPy reference implementations of the banded linear algebra kernels.

Storage convention for a band matrix of order ``n`` with half bandwidth ``k``:
``bands`` has shape ``(2k+1, n)`` and ``bands[k + i - j, j]`` holds the matrix
entry ``(i, j)`` for ``|i - j| <= k``.  Slots that would address rows outside
the matrix are zero.

The LU factorization uses partial pivoting within the band, which introduces
up to ``k`` extra superdiagonals of fill-in; the factored form therefore uses
``3k+1`` rows, with the diagonal of U on row ``2k``.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


class SingularMatrixError(ArithmeticError):
    """A pivot fell below the singularity threshold during factorization."""


def band_matvec(bands: np.ndarray, k: int, x: np.ndarray) -> np.ndarray:
    """Multiply a banded matrix by a vector."""
    n = x.shape[0]
    y = np.zeros(n)
    for o in range(-k, k + 1):
        r = k + o
        if o >= 0:
            y[o:] += bands[r, : n - o] * x[: n - o]
        else:
            y[: n + o] += bands[r, -o:] * x[-o:]
    return y


def default_pivot_tol(bands: np.ndarray) -> float:
    amax = float(np.max(np.abs(bands))) if bands.size else 0.0
    return amax * bands.shape[1] * np.finfo(float).eps


def band_lu_factor(bands: np.ndarray, k: int, pivot_tol: float | None = None):
    """Banded LU factorization with partial pivoting.

    Returns ``(ab, piv)`` where ``ab`` has shape ``(3k+1, n)`` holding L and U
    and ``piv[j]`` is the row swapped into position ``j`` at step ``j``.
    Raises SingularMatrixError when a pivot magnitude is at or below the
    threshold (default: ``n * eps * max|entry|``).
    """
    n = bands.shape[1]
    kv = 2 * k
    if pivot_tol is None:
        pivot_tol = default_pivot_tol(bands)
    ab = np.zeros((3 * k + 1, n))
    ab[k:, :] = bands
    piv = np.zeros(n, dtype=np.int32)
    ju = -1
    for j in range(n):
        km = min(k, n - 1 - j)
        col = ab[kv : kv + km + 1, j]
        p = int(np.argmax(np.abs(col)))
        pv = abs(col[p])
        if not pv > pivot_tol or not np.isfinite(pv):
            raise SingularMatrixError(
                f"pivot {col[p]!r} at column {j} under threshold {pivot_tol!r}"
            )
        piv[j] = j + p
        ju = max(ju, min(j + k + p, n - 1))
        if p != 0:
            for c in range(j, ju + 1):
                r0 = kv + j - c
                ab[r0, c], ab[r0 + p, c] = ab[r0 + p, c], ab[r0, c]
        if km > 0:
            ab[kv + 1 : kv + km + 1, j] /= ab[kv, j]
            for c in range(j + 1, ju + 1):
                f = ab[kv + j - c, c]
                if f != 0.0:
                    r0 = kv + 1 + j - c
                    ab[r0 : r0 + km, c] -= f * ab[kv + 1 : kv + km + 1, j]
    return ab, piv


def band_lu_solve(ab: np.ndarray, piv: np.ndarray, k: int, b: np.ndarray) -> np.ndarray:
    """Solve with a factorization produced by band_lu_factor."""
    n = b.shape[0]
    kv = 2 * k
    y = np.array(b, dtype=float, copy=True)
    for j in range(n):
        p = piv[j]
        if p != j:
            y[j], y[p] = y[p], y[j]
        km = min(k, n - 1 - j)
        if km > 0:
            y[j + 1 : j + km + 1] -= ab[kv + 1 : kv + km + 1, j] * y[j]
    for j in range(n - 1, -1, -1):
        xj = y[j] / ab[kv, j]
        y[j] = xj
        i0 = max(0, j - kv)
        if i0 < j:
            y[i0:j] -= ab[kv + i0 - j : kv, j] * xj
    return y
