"""Built-in semi-discrete problems: operators, reactions, and noise maps.

Each problem bundles a banded operator A (so the drift is -A@x + reaction(x)),
an entrywise or banded reaction with its exact Jacobian, and a diagonal
diffusion map derived from the selected noise kind.  Two-component systems
stack the components into one state vector, block 1 first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .grid import (BandMatrix, GridSpec, assemble_biharmonic,
                   assemble_neg_laplacian, biharmonic_max_eigenvalue,
                   neg_laplacian_max_eigenvalue)

__all__ = [
    "NoiseKind", "DibParams", "SemiDiscreteProblem", "KernelDescriptor",
    "DiagonalJacobian", "BandedJacobian", "PairBlockJacobian",
    "make_ginzburg_landau", "make_cahn_hilliard", "make_uncoupled_system",
    "make_dib", "make_custom", "PROBLEM_NAMES",
]

PROBLEM_NAMES = ("ginzburg_landau", "cahn_hilliard", "uncoupled", "dib")


@dataclass(frozen=True)
class NoiseKind:
    """Noise model: per-node independent Brownian motions with amplitude g(u).

    kind is one of "additive" (g = epsilon), "mult_linear" (g = u),
    "mult_quadratic" (g = u^2) or "custom" (g = custom_fn(u)).
    """

    kind: str
    epsilon: float = 0.0
    tag: str = ""
    custom_fn: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def additive(cls, epsilon: float) -> "NoiseKind":
        return cls("additive", epsilon=float(epsilon))

    @classmethod
    def mult_linear(cls) -> "NoiseKind":
        return cls("mult_linear")

    @classmethod
    def mult_quadratic(cls) -> "NoiseKind":
        return cls("mult_quadratic")

    @classmethod
    def custom(cls, tag: str, fn: Callable[[np.ndarray], np.ndarray]) -> "NoiseKind":
        return cls("custom", tag=tag, custom_fn=fn)


@dataclass(frozen=True)
class DibParams:
    """Parameters of the two-component DIB reaction; no defaults on purpose."""

    d1: float
    d2: float
    rho: float
    a1: float
    a2: float
    b: float
    alpha: float
    c: float
    d: float
    gamma: float
    k2: float
    k3: float

    def __post_init__(self):
        for name in ("d1", "d2"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"diffusion coefficient {name} must be positive")


class DiagonalJacobian:
    """Reaction Jacobian that is diagonal in the stacked state."""

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=float)

    def two_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def sym_max_eigenvalue(self) -> float:
        return float(np.max(self.values))

    def to_band(self) -> BandMatrix:
        return BandMatrix(self.values.size, 0, self.values[None, :].copy())

    def to_dense(self) -> np.ndarray:
        return np.diag(self.values)


class BandedJacobian:
    """Reaction Jacobian given as a general (possibly unsymmetric) band matrix."""

    def __init__(self, band: BandMatrix):
        self.band = band

    def two_norm(self, tol: float = 1e-8, start: np.ndarray | None = None) -> float:
        from .grid import _power_estimate  # local import to avoid a cycle at module load

        b = self.band

        def normal_matvec(v):
            return b.rmatvec(b.matvec(v))

        v0 = start if start is not None else np.ones(b.dim)
        est, ok = _power_estimate(normal_matvec, b.dim, v0, tol, max(10 * b.dim, 50_000))
        if not ok:
            v0 = np.random.default_rng(0x5EED).standard_normal(b.dim)
            est, ok = _power_estimate(normal_matvec, b.dim, v0, tol, max(10 * b.dim, 50_000))
        return float(np.sqrt(max(est, 0.0)))

    def sym_max_eigenvalue(self) -> float:
        dense = self.band.to_dense()
        sym = 0.5 * (dense + dense.T)
        return float(np.max(np.linalg.eigvalsh(sym)))

    def to_band(self) -> BandMatrix:
        return self.band

    def to_dense(self) -> np.ndarray:
        return self.band.to_dense()


class PairBlockJacobian:
    """Jacobian of a two-component pointwise reaction.

    Four diagonal blocks d(R1)/du, d(R1)/dv, d(R2)/du, d(R2)/dv, each stored
    as its diagonal vector of length m; the stacked matrix couples entries i
    and m+i only.
    """

    def __init__(self, duu, duv, dvu, dvv):
        self.duu = np.asarray(duu, dtype=float)
        self.duv = np.asarray(duv, dtype=float)
        self.dvu = np.asarray(dvu, dtype=float)
        self.dvv = np.asarray(dvv, dtype=float)
        self.m = self.duu.size

    def two_norm(self) -> float:
        # permutation-similar to a block diagonal of per-node 2x2 blocks
        p = self.duu**2 + self.duv**2 + self.dvu**2 + self.dvv**2
        det = self.duu * self.dvv - self.duv * self.dvu
        disc = np.sqrt(np.maximum(p**2 - 4.0 * det**2, 0.0))
        return float(np.sqrt(np.max(0.5 * (p + disc))))

    def sym_max_eigenvalue(self) -> float:
        # symmetric part of each 2x2 block: [[duu, s], [s, dvv]], s = (duv+dvu)/2
        s = 0.5 * (self.duv + self.dvu)
        mean = 0.5 * (self.duu + self.dvv)
        rad = np.sqrt((0.5 * (self.duu - self.dvv)) ** 2 + s**2)
        return float(np.max(mean + rad))

    def to_band(self) -> BandMatrix:
        m = self.m
        n = 2 * m
        bands = np.zeros((2 * m + 1, n))
        bands[m, :m] = self.duu
        bands[m, m:] = self.dvv
        bands[0, m:] = self.duv
        bands[2 * m, :m] = self.dvu
        return BandMatrix(n, m, bands)

    def to_dense(self) -> np.ndarray:
        return self.to_band().to_dense()


@dataclass(frozen=True)
class KernelDescriptor:
    """Declarative form of the reaction/diffusion for the fused drivers."""

    reaction_code: int
    reaction_params: np.ndarray
    diffusion_code: int
    diffusion_params: np.ndarray
    reaction_band: BandMatrix | None = None


@dataclass(frozen=True)
class SemiDiscreteProblem:
    """A semi-discretized stochastic reaction-diffusion problem.

    The drift is f(x) = -operator@x + reaction(x) and the noise enters as
    diffusion(x) * dW with independent per-node increments.
    """

    name: str
    grid: GridSpec
    operator: BandMatrix
    reaction: Callable[[np.ndarray], np.ndarray]
    reaction_jacobian: Callable[[np.ndarray], object]
    diffusion: Callable[[np.ndarray], np.ndarray]
    noise: NoiseKind
    n_components: int
    state_dim: int
    operator_order: int
    kernel: KernelDescriptor
    operator_norm_exact: float | None = None
    one_sided_exact: float | None = None
    noise_scale: float = 1.0
    params: object | None = field(default=None, compare=False)


def _noise_scale_factor(grid: GridSpec, noise_scaling: str) -> float:
    if noise_scaling == "none":
        return 1.0
    if noise_scaling == "inv_sqrt_dx":
        return 1.0 / np.sqrt(grid.dx)
    raise ValueError(f"unknown noise_scaling {noise_scaling!r}")


def _diffusion_from_noise(noise: NoiseKind, scale: float):
    """Return (callable, code, params) for a noise kind with amplitude scale."""
    if noise.kind == "additive":
        amp = noise.epsilon * scale

        def diffusion(x, amp=amp):
            return np.full_like(np.asarray(x, dtype=float), amp)

        return diffusion, _kernels.DIFFUSION_CONST, np.array([amp])
    if noise.kind == "mult_linear":

        def diffusion(x, s=scale):
            return s * np.asarray(x, dtype=float)

        return diffusion, _kernels.DIFFUSION_LINEAR, np.array([scale])
    if noise.kind == "mult_quadratic":

        def diffusion(x, s=scale):
            x = np.asarray(x, dtype=float)
            return s * x * x

        return diffusion, _kernels.DIFFUSION_QUADRATIC, np.array([scale])
    if noise.kind == "custom":
        fn = noise.custom_fn
        if fn is None:
            raise ValueError("custom noise needs a custom_fn")

        def diffusion(x, s=scale, fn=fn):
            return s * np.asarray(fn(np.asarray(x, dtype=float)), dtype=float)

        return diffusion, _kernels.DIFFUSION_CUSTOM, np.array([scale])
    raise ValueError(f"unknown noise kind {noise.kind!r}")


def make_ginzburg_landau(grid: GridSpec, noise: NoiseKind,
                         noise_scaling: str = "none") -> SemiDiscreteProblem:
    """Scalar cubic problem: drift -A@u + (u - u^3), A the negative Laplacian."""
    op = assemble_neg_laplacian(grid)
    scale = _noise_scale_factor(grid, noise_scaling)
    diffusion, d_code, d_params = _diffusion_from_noise(noise, scale)

    def reaction(u):
        u = np.asarray(u, dtype=float)
        return u - u**3

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        return DiagonalJacobian(1.0 - 3.0 * u**2)

    kern = KernelDescriptor(_kernels.REACTION_CUBIC, np.array([1.0, -1.0]),
                            d_code, d_params)
    return SemiDiscreteProblem(
        name="ginzburg_landau", grid=grid, operator=op, reaction=reaction,
        reaction_jacobian=jacobian, diffusion=diffusion, noise=noise,
        n_components=1, state_dim=grid.n_unknowns, operator_order=2,
        kernel=kern, operator_norm_exact=neg_laplacian_max_eigenvalue(grid),
        one_sided_exact=1.0, noise_scale=scale)


def make_cahn_hilliard(grid: GridSpec, noise: NoiseKind,
                       noise_scaling: str = "none") -> SemiDiscreteProblem:
    """Fourth-order problem: drift -A@u + L@(1 - 3u^2) with A = L@L,
    L the discrete Laplacian (negative of assemble_neg_laplacian)."""
    op = assemble_biharmonic(grid)
    lap = assemble_neg_laplacian(grid).scaled(-1.0)
    scale = _noise_scale_factor(grid, noise_scaling)
    diffusion, d_code, d_params = _diffusion_from_noise(noise, scale)

    def reaction(u):
        u = np.asarray(u, dtype=float)
        return lap.matvec(1.0 - 3.0 * u**2)

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        # L @ diag(-6u): scale column j of L by -6u_j
        bands = lap.bands * (-6.0 * u)[None, :]
        return BandedJacobian(BandMatrix(lap.dim, lap.half_bandwidth, bands))

    kern = KernelDescriptor(_kernels.REACTION_LAP_POLY, np.array([1.0, -3.0]),
                            d_code, d_params, reaction_band=lap)
    return SemiDiscreteProblem(
        name="cahn_hilliard", grid=grid, operator=op, reaction=reaction,
        reaction_jacobian=jacobian, diffusion=diffusion, noise=noise,
        n_components=1, state_dim=grid.n_unknowns, operator_order=4,
        kernel=kern, operator_norm_exact=biharmonic_max_eigenvalue(grid),
        noise_scale=scale)


def _block_diag_operator(block: BandMatrix, d1: float, d2: float) -> BandMatrix:
    """Stack diag(d1*block, d2*block) keeping the block's bandwidth."""
    m, k = block.dim, block.half_bandwidth
    bands = np.zeros((2 * k + 1, 2 * m))
    bands[:, :m] = d1 * block.bands
    bands[:, m:] = d2 * block.bands
    return BandMatrix(2 * m, k, bands)


def make_uncoupled_system(grid: GridSpec, noise: NoiseKind,
                          noise_scaling: str = "none") -> SemiDiscreteProblem:
    """Two independent components: cubic reaction on block 1, identity on block 2."""
    lap = assemble_neg_laplacian(grid)
    op = _block_diag_operator(lap, 1.0, 1.0)
    m = grid.n_unknowns
    scale = _noise_scale_factor(grid, noise_scaling)
    diffusion, d_code, d_params = _diffusion_from_noise(noise, scale)

    def reaction(x):
        x = np.asarray(x, dtype=float)
        u, v = x[:m], x[m:]
        return np.concatenate([u - u**3, v])

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        u = x[:m]
        return DiagonalJacobian(np.concatenate([1.0 - 3.0 * u**2, np.ones(m)]))

    kern = KernelDescriptor(_kernels.REACTION_TWO_BLOCK, np.array([1.0, -1.0, 1.0]),
                            d_code, d_params)
    return SemiDiscreteProblem(
        name="uncoupled", grid=grid, operator=op, reaction=reaction,
        reaction_jacobian=jacobian, diffusion=diffusion, noise=noise,
        n_components=2, state_dim=2 * m, operator_order=2,
        kernel=kern, operator_norm_exact=neg_laplacian_max_eigenvalue(grid),
        one_sided_exact=1.0, noise_scale=scale)


def make_dib(grid: GridSpec, params: DibParams, noise: NoiseKind,
             noise_scaling: str = "none") -> SemiDiscreteProblem:
    """Two-component DIB morphochemical reaction with cross coupling."""
    lap = assemble_neg_laplacian(grid)
    op = _block_diag_operator(lap, params.d1, params.d2)
    m = grid.n_unknowns
    scale = _noise_scale_factor(grid, noise_scaling)
    diffusion, d_code, d_params = _diffusion_from_noise(noise, scale)
    p = params

    def reaction(x):
        x = np.asarray(x, dtype=float)
        u, v = x[:m], x[m:]
        r1 = p.rho * (p.a1 * (1.0 - v) * u - p.a2 * u**3 - p.b * (v - p.alpha))
        r2 = p.rho * (p.c * (1.0 + p.k2 * u) * (1.0 - v) * (1.0 - p.gamma * (1.0 - v))
                      - p.d * v * (1.0 + p.k3 * u) * (1.0 + p.gamma * v))
        return np.concatenate([r1, r2])

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        u, v = x[:m], x[m:]
        duu = p.rho * (p.a1 * (1.0 - v) - 3.0 * p.a2 * u**2)
        duv = p.rho * (-p.a1 * u - p.b) * np.ones_like(u)
        dvu = p.rho * (p.c * p.k2 * (1.0 - v) * (1.0 - p.gamma * (1.0 - v))
                       - p.d * p.k3 * v * (1.0 + p.gamma * v))
        dvv = p.rho * (p.c * (1.0 + p.k2 * u) * (2.0 * p.gamma * (1.0 - v) - 1.0)
                       - p.d * (1.0 + p.k3 * u) * (1.0 + 2.0 * p.gamma * v))
        return PairBlockJacobian(duu, duv, dvu, dvv)

    kern = KernelDescriptor(
        _kernels.REACTION_DIB,
        np.array([p.rho, p.a1, p.a2, p.b, p.alpha, p.c, p.d, p.gamma, p.k2, p.k3]),
        d_code, d_params)
    return SemiDiscreteProblem(
        name="dib", grid=grid, operator=op, reaction=reaction,
        reaction_jacobian=jacobian, diffusion=diffusion, noise=noise,
        n_components=2, state_dim=2 * m, operator_order=2,
        kernel=kern,
        operator_norm_exact=max(p.d1, p.d2) * neg_laplacian_max_eigenvalue(grid),
        noise_scale=scale, params=params)


def make_custom(name: str, grid: GridSpec, operator: BandMatrix,
                reaction: Callable[[np.ndarray], np.ndarray],
                reaction_jacobian: Callable[[np.ndarray], object],
                noise: NoiseKind, n_components: int = 1,
                operator_order: int = 2,
                noise_scaling: str = "none") -> SemiDiscreteProblem:
    """Registration hook for user-defined problems.

    The jacobian callback may return a DiagonalJacobian, BandedJacobian,
    PairBlockJacobian, a plain 1D array (treated as diagonal) or a dense 2D
    array.  Custom problems always run on the pure-Python stepping loop.
    """
    scale = _noise_scale_factor(grid, noise_scaling)
    diffusion, d_code, d_params = _diffusion_from_noise(noise, scale)
    kern = KernelDescriptor(_kernels.REACTION_CUSTOM, np.zeros(0), d_code, d_params)
    return SemiDiscreteProblem(
        name=name, grid=grid, operator=operator, reaction=reaction,
        reaction_jacobian=reaction_jacobian, diffusion=diffusion, noise=noise,
        n_components=n_components, state_dim=operator.dim,
        operator_order=operator_order, kernel=kern, noise_scale=scale)
