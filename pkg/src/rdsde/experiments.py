"""Monte Carlo mean-square-deviation experiments and result export.

run_msd estimates E||U_n - Y_n||^2 over many coupled pairs, run_dx_sweep
repeats that across grids with regenerated initial profiles, and
strong_order measures endpoint convergence against a fine-step reference
sharing the same Brownian paths.  Exports are plain CSV plus a gnuplot
script; byte determinism (given a seed) is part of the contract.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .grid import GridSpec
from .integrators import (SchemeConfig, _run_with_increments, pair_increments,
                          parallel_path_map, simulate_pair)
from .problems import SemiDiscreteProblem

__all__ = [
    "MsdEstimate", "StrongOrderResult", "AllPathsBlewUpError",
    "EmptyEstimateError", "DegenerateRegressionError",
    "default_initial_profiles", "initial_pair", "run_msd", "run_dx_sweep",
    "strong_order", "export_csv", "export_plot_script",
]

NORM_SCALINGS = ("none", "sqrt_dx")


class AllPathsBlewUpError(RuntimeError):
    """Every path diverged; the partial estimate rides along when available."""

    def __init__(self, message: str, estimate: "MsdEstimate | None" = None):
        super().__init__(message)
        self.estimate = estimate


class EmptyEstimateError(ValueError):
    """Export was asked to write an estimate with no data."""


class DegenerateRegressionError(RuntimeError):
    """Too few usable points (or zero errors) for a log-log slope fit."""


@dataclass
class MsdEstimate:
    """Per-step sample mean and standard error of the squared pair distance.

    Entries where every surviving path has already blown up are NaN; such
    estimates only escape wrapped in AllPathsBlewUpError.
    """

    times: np.ndarray
    msd: np.ndarray
    stderr: np.ndarray
    n_paths: int
    blowup_fraction: float
    config_echo: dict

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


@dataclass
class StrongOrderResult:
    """Least-squares slope of log(endpoint RMS error) against log(dt)."""

    slope: float
    errors: list
    n_paths_used: int


def default_initial_profiles():
    """Smooth Dirichlet-compatible pair with order-one initial separation."""
    return (lambda x: np.sin(np.pi * x), lambda x: -np.sin(np.pi * x))


def initial_pair(problem: SemiDiscreteProblem, u0_fn=None, y0_fn=None):
    """Sample the two initial profiles at the unknown nodes, per component."""
    default_u, default_y = default_initial_profiles()
    u0_fn = u0_fn if u0_fn is not None else default_u
    y0_fn = y0_fn if y0_fn is not None else default_y
    xhat = problem.grid.normalized_unknown_nodes()
    u0 = np.tile(np.asarray(u0_fn(xhat), dtype=float), problem.n_components)
    y0 = np.tile(np.asarray(y0_fn(xhat), dtype=float), problem.n_components)
    return u0, y0


def _echo(problem: SemiDiscreteProblem, cfg: SchemeConfig, n_paths: int,
          norm_scaling: str) -> dict:
    g = problem.grid
    return {
        "problem": problem.name,
        "grid": {"x_left": g.x_left, "x_right": g.x_right,
                 "n_points": g.n_points, "dx": g.dx},
        "scheme": cfg.scheme,
        "theta": cfg.theta,
        "dt": cfg.dt,
        "n_steps": cfg.n_steps,
        "seed": cfg.seed,
        "imex_reaction_weight": cfg.imex_reaction_weight,
        "noise": {"kind": problem.noise.kind, "epsilon": problem.noise.epsilon},
        "noise_scale": problem.noise_scale,
        "n_paths": n_paths,
        "norm_scaling": norm_scaling,
    }


def run_msd(problem: SemiDiscreteProblem, cfg: SchemeConfig, u0: np.ndarray,
            y0: np.ndarray, n_paths: int,
            norm_scaling: str = "none") -> MsdEstimate:
    """Average ||U_n - Y_n||^2 over n_paths independently seeded pairs.

    Paths contribute up to their blow-up step and are counted in
    blowup_fraction afterwards.  norm_scaling="sqrt_dx" reports the grid
    L2 norm (values scaled by dx) without touching the dynamics.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    if norm_scaling not in NORM_SCALINGS:
        raise ValueError(f"norm_scaling must be one of {NORM_SCALINGS}")
    u0 = np.ascontiguousarray(u0, dtype=float)
    y0 = np.ascontiguousarray(y0, dtype=float)

    def one_path(j):
        tr = simulate_pair(problem, cfg, u0, y0, path_index=j)
        return tr.z_sqnorms, tr.blowup_step is not None

    rows = parallel_path_map(one_path, n_paths)
    z = np.stack([r[0] for r in rows])
    n_blown = sum(r[1] for r in rows)
    alive = np.isfinite(z)
    counts = alive.sum(axis=0)
    # values just before a blow-up can be huge; overflow to inf in the
    # aggregates is honest data there, so keep numpy quiet
    with np.errstate(over="ignore", invalid="ignore"):
        sums = np.where(alive, z, 0.0).sum(axis=0)
        msd = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        centered = np.where(alive, z - msd, 0.0)
        var = np.where(counts > 1,
                       (centered**2).sum(axis=0) / np.maximum(counts - 1, 1), 0.0)
        stderr = np.where(counts > 0, np.sqrt(var / np.maximum(counts, 1)), np.nan)
    # every path starts from the same deterministic separation
    diff = u0 - y0
    msd[0] = float(diff @ diff)
    stderr[0] = 0.0
    if norm_scaling == "sqrt_dx":
        msd = msd * problem.grid.dx
        stderr = stderr * problem.grid.dx
    est = MsdEstimate(
        times=cfg.dt * np.arange(cfg.n_steps + 1), msd=msd, stderr=stderr,
        n_paths=n_paths, blowup_fraction=n_blown / n_paths,
        config_echo=_echo(problem, cfg, n_paths, norm_scaling))
    if n_blown == n_paths:
        raise AllPathsBlewUpError(
            f"all {n_paths} paths blew up (earliest data kept)", est)
    return est


def run_dx_sweep(problem_family, cfg: SchemeConfig, grids: list[GridSpec],
                 n_paths: int, u0_fn=None, y0_fn=None,
                 norm_scaling: str = "none") -> list[MsdEstimate]:
    """One msd estimate per grid, initial profiles resampled on each grid.

    problem_family maps a GridSpec to the problem on that grid; theta, dt and
    the path seeds stay fixed across grids.
    """
    if not grids:
        raise ValueError("grid list must be nonempty")
    out = []
    for g in grids:
        problem = problem_family(g)
        u0, y0 = initial_pair(problem, u0_fn, y0_fn)
        out.append(run_msd(problem, cfg, u0, y0, n_paths, norm_scaling))
    return out


def strong_order(problem: SemiDiscreteProblem, theta: float, dt_list,
                 n_paths: int, t_final: float, u0: np.ndarray | None = None,
                 scheme: str = "theta_maruyama", seed: int = 0,
                 newton_tol: float = 1e-10,
                 newton_max_iter: int = 25) -> StrongOrderResult:
    """Endpoint strong error of each dt against the finest dt as reference.

    All dts must divide t_final and be integer multiples of the finest one;
    coarse increments are the summed fine increments of the same path.  Paths
    that blow up in any run are dropped from every average.
    """
    dts = sorted(set(float(dt) for dt in dt_list), reverse=True)
    if len(dts) < 3:
        raise DegenerateRegressionError(
            "need at least three dt values (reference plus two points)")
    dt_ref = dts[-1]
    ratios = []
    for dt in dts:
        r = dt / dt_ref
        n = t_final / dt
        if abs(r - round(r)) > 1e-9 or abs(n - round(n)) > 1e-9:
            raise ValueError(
                f"dt={dt} breaks the refinement chain (t_final={t_final}, "
                f"reference dt={dt_ref})")
        ratios.append(int(round(r)))
    n_ref = int(round(t_final / dt_ref))
    if u0 is None:
        u0, _ = initial_pair(problem)
    u0 = np.ascontiguousarray(u0, dtype=float)

    def make_cfg(dt, n):
        return SchemeConfig(theta=theta, dt=dt, n_steps=n, scheme=scheme,
                            newton_tol=newton_tol,
                            newton_max_iter=newton_max_iter, seed=seed)

    def one_path(j):
        fine = pair_increments(seed, j, n_ref, problem.state_dim, dt_ref)
        states, _, blow = _run_with_increments(
            problem, make_cfg(dt_ref, n_ref), u0, fine)
        if blow is not None:
            return None
        endpoint_ref = states[-1]
        sq = []
        for dt, r in zip(dts[:-1], ratios[:-1]):
            n = n_ref // r
            coarse = fine.reshape(n, r, problem.state_dim).sum(axis=1)
            states, _, blow = _run_with_increments(
                problem, make_cfg(dt, n), u0, coarse)
            if blow is not None:
                return None
            d = states[-1] - endpoint_ref
            sq.append(float(d @ d))
        return sq

    rows = [r for r in parallel_path_map(one_path, n_paths) if r is not None]
    if not rows:
        raise AllPathsBlewUpError("all paths blew up during the order study")
    mean_sq = np.mean(np.asarray(rows), axis=0)
    errors = [(dt, float(np.sqrt(ms))) for dt, ms in zip(dts[:-1], mean_sq)]
    errs = np.array([e for _, e in errors])
    if np.any(errs <= 0.0) or not np.all(np.isfinite(errs)):
        raise DegenerateRegressionError(
            "zero or non-finite endpoint errors; no log-log fit possible")
    slope = float(np.polyfit(np.log(np.array(dts[:-1])), np.log(errs), 1)[0])
    return StrongOrderResult(slope=slope, errors=errors,
                             n_paths_used=len(rows))


def export_csv(est: MsdEstimate, path, timestamp: bool = True) -> None:
    """Write step,time,msd,stderr rows; values keep 17 significant digits."""
    if est.times.size == 0:
        raise EmptyEstimateError("refusing to export an empty estimate")
    lines = []
    if timestamp:
        now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(f"# generated: {now}")
    lines.append("step,time,msd,stderr")
    for n in range(est.times.size):
        lines.append("%d,%.17g,%.17g,%.17g"
                     % (n, est.times[n], est.msd[n], est.stderr[n]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def export_plot_script(estimates, path, csv_paths, labels=None,
                       title: str = "mean-square deviation") -> None:
    """Emit a gnuplot script drawing one log-scale curve per estimate."""
    if isinstance(estimates, MsdEstimate):
        estimates = [estimates]
    if isinstance(csv_paths, (str, bytes)):
        csv_paths = [csv_paths]
    if not estimates or len(estimates) != len(csv_paths):
        raise ValueError("need one csv path per estimate")
    for est in estimates:
        if est.times.size == 0:
            raise EmptyEstimateError("refusing to plot an empty estimate")
    if labels is None:
        labels = []
        for est in estimates:
            g = est.config_echo.get("grid", {})
            labels.append("dx=%g" % g.get("dx", 0.0))
    curves = ", \\\n     ".join(
        "'%s' using 2:3 with lines title '%s'" % (csv, lab)
        for csv, lab in zip(csv_paths, labels))
    script = "\n".join([
        "set datafile separator ','",
        "set logscale y",
        "set xlabel 'time'",
        "set ylabel 'E ||U_n - Y_n||^2'",
        f"set title '{title}'",
        "set key top right",
        f"plot {curves}",
        "pause -1 'press enter to close'",
        "",
    ])
    with open(path, "w", encoding="ascii") as fh:
        fh.write(script)
