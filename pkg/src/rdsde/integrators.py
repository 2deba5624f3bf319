"""Theta-Maruyama and theta-IMEX stepping of coupled trajectory pairs.

Both schemes integrate dX = (-A@X + R(X)) dt + G(X) dW with per-node
independent Wiener increments.  theta-Maruyama treats the whole drift with
the theta weighting and solves the implicit stage by Newton iteration with
the exact Jacobian I + theta*dt*(A - R'(x)); theta-IMEX is implicit only in
the linear operator and needs exactly one banded solve per step.

A trajectory pair shares the same increment vector in every step, so the
difference process measures contractivity of the scheme, not noise.
Non-finite states and Newton failures are flagged as blow-up data rather
than raised from the path loop.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grid import BandLU, BandMatrix, band_lu_factor
from .problems import SemiDiscreteProblem

__all__ = [
    "SchemeConfig", "PairTrajectory", "NewtonDivergenceError",
    "sample_wiener_increments", "theta_maruyama_step", "theta_imex_step",
    "simulate_pair", "parallel_path_map",
]


def parallel_path_map(fn, n_paths: int) -> list:
    """Evaluate fn(path_index) for every path, threaded when it pays off.

    Results go into pre-assigned slots, so the output order never depends on
    scheduling.  SPDE_THREADS caps (or disables, =1) the worker pool.
    """
    workers = int(os.environ.get("SPDE_THREADS", "0") or "0")
    if workers <= 0:
        workers = min(os.cpu_count() or 1, 8)
    results = [None] * n_paths
    if workers == 1 or n_paths <= 1:
        for j in range(n_paths):
            results[j] = fn(j)
        return results

    def worker(j):
        results[j] = fn(j)

    with ThreadPoolExecutor(max_workers=min(workers, n_paths)) as pool:
        list(pool.map(worker, range(n_paths)))
    return results

SCHEMES = ("theta_maruyama", "theta_imex")
IMEX_WEIGHTS = ("dt", "theta_dt")


class NewtonDivergenceError(RuntimeError):
    """Newton iteration hit its cap or produced non-finite values."""


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping parameters shared by both schemes."""

    theta: float = 1.0
    dt: float = 0.002
    n_steps: int = 500
    scheme: str = "theta_maruyama"
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    seed: int = 0
    imex_reaction_weight: str = "dt"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.newton_tol <= 0.0 or self.newton_max_iter < 1:
            raise ValueError("newton_tol must be positive and newton_max_iter >= 1")
        if self.imex_reaction_weight not in IMEX_WEIGHTS:
            raise ValueError(
                f"imex_reaction_weight must be one of {IMEX_WEIGHTS}, "
                f"got {self.imex_reaction_weight!r}")

    @property
    def t_final(self) -> float:
        return self.dt * self.n_steps


@dataclass
class PairTrajectory:
    """Result of simulate_pair.

    z_sqnorms[n] is the squared Euclidean distance of the two states after n
    steps; entries from blowup_step on are NaN.  newton_iters has one column
    per trajectory.
    """

    times: np.ndarray
    z_sqnorms: np.ndarray
    newton_iters: np.ndarray
    blowup_step: int | None
    u_states: np.ndarray | None = None
    y_states: np.ndarray | None = None


def sample_wiener_increments(rng: np.random.Generator, dim: int, dt: float) -> np.ndarray:
    """One step of per-node Wiener increments, N(0, dt) each."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    return rng.normal(0.0, np.sqrt(dt), dim)


def pair_increments(seed: int, path_index: int, n_steps: int, dim: int,
                    dt: float) -> np.ndarray:
    """All increments of one path, derived deterministically from (seed, path).

    Row n equals the n-th call to sample_wiener_increments on the same
    generator, so pre-sampling does not change the stream.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, path_index]))
    return rng.normal(0.0, np.sqrt(dt), (n_steps, dim))


def _build_implicit_band(op: BandMatrix, theta_dt: float) -> BandMatrix:
    """I + theta_dt * A as a band matrix."""
    bands = theta_dt * op.bands
    bands[op.half_bandwidth, :] += 1.0
    return BandMatrix(op.dim, op.half_bandwidth, bands)


def _build_newton_matrix(op: BandMatrix, theta_dt: float, jac) -> BandMatrix | np.ndarray:
    """I + theta_dt * (A - R'(x)) in banded form, dense if the Jacobian is dense."""
    if isinstance(jac, np.ndarray) and jac.ndim == 2:
        n = op.dim
        return np.eye(n) + theta_dt * (op.to_dense() - jac)
    if isinstance(jac, np.ndarray):
        jac_band = BandMatrix(op.dim, 0, np.asarray(jac, dtype=float)[None, :].copy())
    else:
        jac_band = jac.to_band()
    kj = jac_band.half_bandwidth
    k = max(op.half_bandwidth, kj)
    n = op.dim
    bands = np.zeros((2 * k + 1, n))
    ko = op.half_bandwidth
    bands[k - ko : k + ko + 1, :] = theta_dt * op.bands
    bands[k, :] += 1.0
    bands[k - kj : k + kj + 1, :] -= theta_dt * jac_band.bands
    return BandMatrix(n, k, bands)


def _solve_newton_system(mat, f: np.ndarray) -> np.ndarray:
    if isinstance(mat, BandMatrix):
        return band_lu_factor(mat).solve(f)
    return np.linalg.solve(mat, f)


def _maruyama_newton(problem: SemiDiscreteProblem, theta_dt: float,
                     rhs: np.ndarray, x_init: np.ndarray, tol: float,
                     max_iter: int):
    """Solve x = rhs + theta_dt*(-A@x + R(x)) by Newton; returns (x, updates)."""
    op = problem.operator
    norm_rhs = float(np.linalg.norm(rhs))
    x = x_init.copy()
    iters = 0
    while True:
        f = x + theta_dt * op.matvec(x) - theta_dt * problem.reaction(x) - rhs
        norm_f = float(np.linalg.norm(f))
        if not np.isfinite(norm_f):
            raise NewtonDivergenceError("non-finite Newton residual")
        if norm_f <= tol * (1.0 + norm_rhs):
            return x, iters
        if iters >= max_iter:
            raise NewtonDivergenceError(
                f"no convergence in {max_iter} iterations (residual {norm_f:.3e})")
        jac = problem.reaction_jacobian(x)
        mat = _build_newton_matrix(op, theta_dt, jac)
        try:
            dx = _solve_newton_system(mat, f)
        except _kernels.SingularMatrixError as exc:
            raise NewtonDivergenceError(f"singular Newton matrix: {exc}") from exc
        x = x - dx
        iters += 1


def theta_maruyama_step(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                        x_n: np.ndarray, dw: np.ndarray):
    """One theta-Maruyama step; returns (x_next, newton_iterations)."""
    x_n = np.asarray(x_n, dtype=float)
    dw = np.asarray(dw, dtype=float)
    op = problem.operator
    fx = -op.matvec(x_n) + problem.reaction(x_n)
    rhs = x_n + (1.0 - cfg.theta) * cfg.dt * fx + problem.diffusion(x_n) * dw
    if cfg.theta == 0.0:
        return rhs, 0
    return _maruyama_newton(problem, cfg.theta * cfg.dt, rhs, x_n,
                            cfg.newton_tol, cfg.newton_max_iter)


def theta_imex_step(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                    x_n: np.ndarray, dw: np.ndarray,
                    lin_lu: BandLU | None = None) -> np.ndarray:
    """One theta-IMEX step: implicit in the operator, explicit reaction.

    lin_lu may hold a prefactored I + theta*dt*A to reuse across steps.
    """
    x_n = np.asarray(x_n, dtype=float)
    dw = np.asarray(dw, dtype=float)
    op = problem.operator
    w = cfg.theta * cfg.dt if cfg.imex_reaction_weight == "theta_dt" else cfg.dt
    rhs = (x_n - (1.0 - cfg.theta) * cfg.dt * op.matvec(x_n)
           + w * problem.reaction(x_n) + problem.diffusion(x_n) * dw)
    if cfg.theta == 0.0:
        return rhs
    if lin_lu is None:
        lin_lu = band_lu_factor(_build_implicit_band(op, cfg.theta * cfg.dt))
    return lin_lu.solve(rhs)


def _python_run_path(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                     x0: np.ndarray, dws: np.ndarray, states: np.ndarray,
                     iters: np.ndarray) -> int:
    """Reference path loop; returns the blow-up step or -1."""
    n_steps = dws.shape[0]
    lin_lu = None
    if cfg.scheme == "theta_imex" and cfg.theta > 0.0:
        lin_lu = band_lu_factor(_build_implicit_band(problem.operator,
                                                     cfg.theta * cfg.dt))
    x = x0.copy()
    states[0] = x
    # overflow on a diverging path is expected and ends the path as data,
    # so keep numpy quiet inside the loop
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for n in range(n_steps):
            dw = dws[n]
            try:
                if cfg.scheme == "theta_maruyama":
                    x_next, it = theta_maruyama_step(problem, cfg, x, dw)
                else:
                    x_next = theta_imex_step(problem, cfg, x, dw, lin_lu)
                    it = 0
            except (NewtonDivergenceError, _kernels.SingularMatrixError):
                return n + 1
            if not np.all(np.isfinite(x_next)):
                return n + 1
            x = x_next
            states[n + 1] = x
            iters[n] = it
    return -1


_DUMMY_BAND = np.zeros((1, 1))


def _run_with_increments(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                         x0: np.ndarray, dws: np.ndarray):
    """Advance one trajectory through all increments.

    Returns (states, iters, blowup_step|None); states rows from the blow-up
    step on are NaN.  Dispatches to the compiled whole-path driver when the
    problem and scheme fit it.
    """
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (problem.state_dim,):
        raise ValueError(
            f"state of length {problem.state_dim} expected, got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state contains non-finite entries")
    dws = np.ascontiguousarray(dws, dtype=float)
    n_steps = dws.shape[0]
    states = np.empty((n_steps + 1, problem.state_dim))
    iters = np.zeros(n_steps, dtype=np.int64)
    kd = problem.kernel
    scheme_code = (_kernels.SCHEME_MARUYAMA if cfg.scheme == "theta_maruyama"
                   else _kernels.SCHEME_IMEX)
    if _kernels.fused_driver_available(scheme_code, kd.reaction_code, kd.diffusion_code):
        rb = kd.reaction_band
        blow = _kernels.fused_run_path(
            scheme_code, problem.operator.bands, problem.operator.half_bandwidth,
            kd.reaction_code, kd.reaction_params,
            rb.bands if rb is not None else _DUMMY_BAND,
            rb.half_bandwidth if rb is not None else -1,
            kd.diffusion_code, kd.diffusion_params,
            cfg.theta, cfg.dt,
            1 if cfg.imex_reaction_weight == "theta_dt" else 0,
            x0, dws, cfg.newton_tol, cfg.newton_max_iter, states, iters)
    else:
        blow = _python_run_path(problem, cfg, x0, dws, states, iters)
    if blow >= 0:
        states[blow:] = np.nan
        iters[blow - 1:] = 0
        return states, iters, blow
    return states, iters, None


def simulate_pair(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                  u0: np.ndarray, y0: np.ndarray, record_states: bool = False,
                  path_index: int = 0) -> PairTrajectory:
    """Integrate two trajectories under one shared noise path.

    The increments are fully determined by (cfg.seed, path_index).  Blow-up
    of either trajectory truncates the recorded distances; it is reported in
    blowup_step, not raised.
    """
    u0 = np.ascontiguousarray(u0, dtype=float)
    y0 = np.ascontiguousarray(y0, dtype=float)
    dws = pair_increments(cfg.seed, path_index, cfg.n_steps, problem.state_dim,
                          cfg.dt)
    u_states, iters_u, blow_u = _run_with_increments(problem, cfg, u0, dws)
    y_states, iters_y, blow_y = _run_with_increments(problem, cfg, y0, dws)
    blows = [b for b in (blow_u, blow_y) if b is not None]
    blowup_step = min(blows) if blows else None
    diff = u_states - y_states
    z_sqnorms = np.einsum("ij,ij->i", diff, diff)
    if blowup_step is not None:
        z_sqnorms[blowup_step:] = np.nan
    times = cfg.dt * np.arange(cfg.n_steps + 1)
    return PairTrajectory(
        times=times, z_sqnorms=z_sqnorms,
        newton_iters=np.stack([iters_u, iters_y], axis=1),
        blowup_step=blowup_step,
        u_states=u_states if record_states else None,
        y_states=y_states if record_states else None)
