"""Uniform 1D grids, Dirichlet difference operators and banded linear algebra.

The domain [x_left, x_right] is split into ``n_points`` cells of width
``dx = (x_right - x_left) / n_points``; node ``i`` sits at ``x_left + i*dx``
for ``i = 0 .. n_points-1``, so the right endpoint itself is not a node.
With homogeneous Dirichlet data the left boundary node is eliminated and the
operators act on the ``n_points - 1`` unknown nodes ``1 .. n_points-1``; the
Dirichlet value at ``x_right`` enters (as zero) through the last stencil.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import SingularMatrixError

__all__ = [
    "GridSpec", "BandMatrix", "BandLU", "InvalidDomainError",
    "SingularMatrixError", "PowerIterationError", "build_grid",
    "assemble_neg_laplacian", "assemble_biharmonic", "spectral_norm",
    "band_lu_factor", "solve_banded", "neg_laplacian_max_eigenvalue",
    "biharmonic_max_eigenvalue",
]


class InvalidDomainError(ValueError):
    """Degenerate domain or too few grid points."""


class PowerIterationError(RuntimeError):
    """Power iteration failed to reach the requested tolerance."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid description; build with build_grid."""

    x_left: float
    x_right: float
    n_points: int
    dx: float

    @property
    def n_unknowns(self) -> int:
        return self.n_points - 1

    @property
    def span(self) -> float:
        return self.x_right - self.x_left

    def nodes(self) -> np.ndarray:
        """All stored nodes, boundary node included."""
        return self.x_left + self.dx * np.arange(self.n_points)

    def unknown_nodes(self) -> np.ndarray:
        """Coordinates of the unknown (non-boundary) nodes."""
        return self.nodes()[1:]

    def normalized_unknown_nodes(self) -> np.ndarray:
        """Unknown node coordinates mapped to (0, 1)."""
        return (self.unknown_nodes() - self.x_left) / self.span


def build_grid(x_left: float, x_right: float, interior_plus_boundary: int) -> GridSpec:
    """Partition [x_left, x_right] into interior_plus_boundary cells."""
    if not np.isfinite(x_left) or not np.isfinite(x_right) or x_right <= x_left:
        raise InvalidDomainError(f"invalid domain [{x_left}, {x_right}]")
    if interior_plus_boundary < 4:
        raise InvalidDomainError(
            f"need at least 4 grid points, got {interior_plus_boundary}"
        )
    n = int(interior_plus_boundary)
    dx = (x_right - x_left) / n
    return GridSpec(float(x_left), float(x_right), n, dx)


class BandMatrix:
    """Square banded matrix in compact storage.

    ``bands[half_bandwidth + i - j, j]`` holds entry ``(i, j)``; everything
    outside the band is exactly zero.  Instances are treated as immutable
    once constructed.
    """

    def __init__(self, dim: int, half_bandwidth: int, bands: np.ndarray):
        bands = np.ascontiguousarray(bands, dtype=float)
        if bands.shape != (2 * half_bandwidth + 1, dim):
            raise ValueError(
                f"bands shape {bands.shape} does not match dim {dim}, "
                f"half bandwidth {half_bandwidth}"
            )
        self.dim = dim
        self.half_bandwidth = half_bandwidth
        self.bands = bands

    def entry(self, i: int, j: int) -> float:
        k = self.half_bandwidth
        if abs(i - j) > k:
            return 0.0
        return float(self.bands[k + i - j, j])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"vector of length {self.dim} expected, got {x.shape}")
        return _kernels.band_matvec(self.bands, self.half_bandwidth, x)

    def __matmul__(self, other):
        if isinstance(other, BandMatrix):
            return self.matmul(other)
        return self.matvec(other)

    def to_dense(self) -> np.ndarray:
        n, k = self.dim, self.half_bandwidth
        dense = np.zeros((n, n))
        for o in range(-k, k + 1):
            r = k + o
            if o >= 0:
                idx = np.arange(n - o)
                dense[idx + o, idx] = self.bands[r, : n - o]
            else:
                idx = np.arange(-o, n)
                dense[idx + o, idx] = self.bands[r, -o:]
        return dense

    @classmethod
    def from_dense(cls, dense: np.ndarray, half_bandwidth: int) -> "BandMatrix":
        dense = np.asarray(dense, dtype=float)
        n = dense.shape[0]
        if dense.shape != (n, n):
            raise ValueError("square matrix expected")
        k = half_bandwidth
        bands = np.zeros((2 * k + 1, n))
        for o in range(-k, k + 1):
            r = k + o
            if o >= 0:
                idx = np.arange(n - o)
                bands[r, : n - o] = dense[idx + o, idx]
            else:
                idx = np.arange(-o, n)
                bands[r, -o:] = dense[idx + o, idx]
        return cls(n, k, bands)

    def matmul(self, other: "BandMatrix") -> "BandMatrix":
        """Product of two band matrices; exact since out-of-band slots are zero."""
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        k = self.half_bandwidth + other.half_bandwidth
        dense = self.to_dense() @ other.to_dense()
        return BandMatrix.from_dense(dense, k)

    def scaled(self, c: float) -> "BandMatrix":
        return BandMatrix(self.dim, self.half_bandwidth, c * self.bands)

    def widened(self, half_bandwidth: int) -> "BandMatrix":
        """Same matrix stored with a larger half bandwidth."""
        k, knew = self.half_bandwidth, half_bandwidth
        if knew < k:
            raise ValueError("cannot shrink the bandwidth")
        if knew == k:
            return self
        bands = np.zeros((2 * knew + 1, self.dim))
        bands[knew - k : knew + k + 1, :] = self.bands
        return BandMatrix(self.dim, knew, bands)

    def transpose(self) -> "BandMatrix":
        return BandMatrix.from_dense(self.to_dense().T, self.half_bandwidth)

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """Transpose-times-vector without forming the transpose."""
        n, k = self.dim, self.half_bandwidth
        x = np.ascontiguousarray(x, dtype=float)
        y = np.zeros(n)
        for o in range(-k, k + 1):
            r = k + o
            if o >= 0:
                y[: n - o] += self.bands[r, : n - o] * x[o:]
            else:
                y[-o:] += self.bands[r, -o:] * x[: n + o]
        return y

    def is_symmetric(self) -> bool:
        k = self.half_bandwidth
        for o in range(1, k + 1):
            n = self.dim
            if not np.array_equal(self.bands[k + o, : n - o], self.bands[k - o, o:]):
                return False
        return True


def assemble_neg_laplacian(grid: GridSpec) -> BandMatrix:
    """Negative second-difference operator with Dirichlet boundaries.

    Tridiagonal (-1, 2, -1)/dx^2 of order grid.n_unknowns; applied to nodal
    samples it approximates -u''.
    """
    m = grid.n_unknowns
    inv2 = 1.0 / grid.dx**2
    bands = np.zeros((3, m))
    bands[0, 1:] = -inv2
    bands[1, :] = 2.0 * inv2
    bands[2, : m - 1] = -inv2
    return BandMatrix(m, 1, bands)


def assemble_biharmonic(grid: GridSpec) -> BandMatrix:
    """Discrete biharmonic operator: the square of the Dirichlet Laplacian.

    Pentadiagonal with interior stencil (1, -4, 6, -4, 1)/dx^4.
    """
    if grid.n_unknowns < 5:
        raise InvalidDomainError(
            f"biharmonic operator needs at least 5 unknowns, grid has {grid.n_unknowns}"
        )
    lap = assemble_neg_laplacian(grid)
    return lap.matmul(lap)


def neg_laplacian_max_eigenvalue(grid: GridSpec) -> float:
    """Closed-form largest eigenvalue of assemble_neg_laplacian(grid)."""
    m = grid.n_unknowns
    return (2.0 - 2.0 * np.cos(m * np.pi / (m + 1))) / grid.dx**2


def biharmonic_max_eigenvalue(grid: GridSpec) -> float:
    """Closed-form largest eigenvalue of assemble_biharmonic(grid)."""
    return neg_laplacian_max_eigenvalue(grid) ** 2


def _power_estimate(matvec, dim: int, v0: np.ndarray, tol: float, max_iter: int):
    """Rayleigh-quotient power iteration from a fixed start vector.

    Returns (estimate, converged).  The stopping rule treats the successive
    Rayleigh-quotient differences as a geometric sequence and bounds the
    remaining error from their observed ratio.
    """
    nrm = np.linalg.norm(v0)
    if nrm == 0.0:
        return 0.0, True
    v = v0 / nrm
    rho_prev = None
    diff_prev = None
    for _ in range(max_iter):
        w = matvec(v)
        rho = float(v @ w)
        wn = np.linalg.norm(w)
        if wn == 0.0:
            # v is an exact null vector
            return 0.0, True
        v = w / wn
        if rho_prev is not None:
            diff = abs(rho - rho_prev)
            scale = max(abs(rho), np.finfo(float).tiny)
            if diff == 0.0:
                return rho, True
            if diff_prev is not None and diff < diff_prev:
                ratio = diff / diff_prev
                err_est = diff * ratio / (1.0 - ratio)
                if err_est <= 0.25 * tol * scale:
                    return rho, True
            diff_prev = diff
        rho_prev = rho
    return (rho_prev if rho_prev is not None else 0.0), False


def spectral_norm(m: BandMatrix, tol: float = 1e-8, max_iter: int | None = None) -> float:
    """Largest absolute eigenvalue of a symmetric band matrix.

    Power iteration with a deterministic all-ones start vector; a second run
    from a fixed seeded start guards against starts that are orthogonal to
    the dominant eigenvector (which happens for even-order difference
    stencils).  Raises PowerIterationError if neither run converges within
    max_iter iterations.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = max(10 * m.dim, 200_000)
    est1, ok1 = _power_estimate(m.matvec, m.dim, np.ones(m.dim), tol, max_iter)
    v2 = np.random.default_rng(0x5EED).standard_normal(m.dim)
    est2, ok2 = _power_estimate(m.matvec, m.dim, v2, tol, max_iter)
    if not (ok1 or ok2):
        raise PowerIterationError(
            f"power iteration did not converge within {max_iter} iterations"
        )
    candidates = [e for e, ok in ((est1, ok1), (est2, ok2)) if ok]
    return float(max(np.abs(candidates)))


class BandLU:
    """Factored banded matrix; reusable and read-only after construction."""

    def __init__(self, ab: np.ndarray, piv: np.ndarray, half_bandwidth: int):
        self.ab = ab
        self.piv = piv
        self.half_bandwidth = half_bandwidth
        self.dim = ab.shape[1]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.ascontiguousarray(rhs, dtype=float)
        if rhs.shape != (self.dim,):
            raise ValueError(f"vector of length {self.dim} expected")
        return _kernels.band_lu_solve(self.ab, self.piv, self.half_bandwidth, rhs)


def band_lu_factor(m: BandMatrix, pivot_tol: float | None = None) -> BandLU:
    """Factor a band matrix once for repeated solves."""
    ab, piv = _kernels.band_lu_factor(m.bands, m.half_bandwidth, pivot_tol)
    return BandLU(ab, piv, m.half_bandwidth)


def solve_banded(m: BandMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve m @ x = rhs by banded LU with partial pivoting."""
    return band_lu_factor(m).solve(rhs)
