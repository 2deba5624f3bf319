"""Command-line front end: seeded, file-driven experiment orchestration.

Subcommands: analyze (contractivity report), msd (mean-square deviation of a
coupled pair ensemble), sweep (same across several grids), order (empirical
strong order), simulate (single-pair trajectory dump).  All randomness flows
from the config seed; outputs are byte-reproducible except for an optional
timestamp comment line.

Exit codes: 0 success, 1 internal error, 2 bad config, 3 blow-up dominated
run (files are still written), 4 output io error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import (VARIANT_NORM, VARIANT_NORM_SQUARED, derive_constants,
                       evaluate_predicates)
from .experiments import (AllPathsBlewUpError, MsdEstimate, export_csv,
                          export_plot_script, initial_pair, run_msd,
                          strong_order)
from .grid import build_grid
from .integrators import SchemeConfig, simulate_pair
from .problems import (DibParams, NoiseKind, make_cahn_hilliard, make_dib,
                       make_ginzburg_landau, make_uncoupled_system)

__all__ = ["ConfigError", "RunConfig", "parse_config", "main"]

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_IO = 4

DEFAULT_GRIDS = [16, 32, 64]


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or fails validation."""


@dataclass
class RunConfig:
    """Fully resolved configuration (file values merged with defaults)."""

    problem_name: str
    dib: DibParams | None
    x_left: float
    x_right: float
    n_points: int
    n_points_list: list
    scheme: str
    theta: float
    n_steps: int
    t_final: float
    newton_tol: float
    newton_max_iter: int
    imex_reaction_weight: str
    noise_kind: str
    epsilon: float
    noise_scaling: str
    norm_scaling: str
    m_variant: str
    n_paths: int
    seed: int
    analyze_n_paths: int
    order_t_final: float
    order_dt_exponents: list
    order_theta: float
    order_n_paths: int

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps


def _load_schema() -> dict:
    text = resources.files("rdsde").joinpath("config_schema.json").read_text()
    return json.loads(text)


def parse_config(path) -> RunConfig:
    """Read, validate, and default-fill a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config is not valid JSON (line {exc.lineno}, column {exc.colno}): "
            f"{exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(_load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        where = err.json_path if err.json_path != "$" else "top level"
        raise ConfigError(f"invalid config at {where}: {err.message}")

    problem = raw["problem"]
    grid = raw.get("grid", {})
    scheme = raw.get("scheme", {})
    noise = raw.get("noise", {})
    flags = raw.get("flags", {})
    analyze = raw.get("analyze", {})
    order = raw.get("order", {})
    dib = None
    if problem["name"] == "dib":
        try:
            dib = DibParams(**problem["dib"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad dib parameters: {exc}") from exc
    theta = float(scheme.get("theta", 1.0))
    return RunConfig(
        problem_name=problem["name"],
        dib=dib,
        x_left=float(grid.get("x_left", 0.0)),
        x_right=float(grid.get("x_right", 1.0)),
        n_points=int(grid.get("n_points", 32)),
        n_points_list=list(grid.get("n_points_list", DEFAULT_GRIDS)),
        scheme=scheme.get("name", "theta_maruyama"),
        theta=theta,
        n_steps=int(scheme.get("n_steps", 500)),
        t_final=float(scheme.get("t_final", 1.0)),
        newton_tol=float(scheme.get("newton_tol", 1e-10)),
        newton_max_iter=int(scheme.get("newton_max_iter", 25)),
        imex_reaction_weight=scheme.get("imex_reaction_weight", "dt"),
        noise_kind=noise.get("kind", "additive"),
        epsilon=float(noise.get("epsilon", 0.1)),
        noise_scaling=flags.get("noise_scaling", "none"),
        norm_scaling=flags.get("norm_scaling", "none"),
        m_variant=flags.get("m_variant", "auto"),
        n_paths=int(raw.get("n_paths", 500)),
        seed=int(raw.get("seed", 0)),
        analyze_n_paths=int(analyze.get("n_paths", 100)),
        order_t_final=float(order.get("t_final", 2.0**-9)),
        order_dt_exponents=list(order.get("dt_exponents", [6, 7, 8, 9, 10])),
        order_theta=float(order.get("theta", theta)),
        order_n_paths=int(order.get("n_paths", 200)),
    )


def _noise(rc: RunConfig) -> NoiseKind:
    if rc.noise_kind == "additive":
        return NoiseKind.additive(rc.epsilon)
    if rc.noise_kind == "mult_linear":
        return NoiseKind.mult_linear()
    return NoiseKind.mult_quadratic()


def _build_problem(rc: RunConfig, n_points: int):
    grid = build_grid(rc.x_left, rc.x_right, n_points)
    noise = _noise(rc)
    if rc.problem_name == "ginzburg_landau":
        return make_ginzburg_landau(grid, noise, rc.noise_scaling)
    if rc.problem_name == "cahn_hilliard":
        return make_cahn_hilliard(grid, noise, rc.noise_scaling)
    if rc.problem_name == "uncoupled":
        return make_uncoupled_system(grid, noise, rc.noise_scaling)
    return make_dib(grid, rc.dib, noise, rc.noise_scaling)


def _scheme_config(rc: RunConfig, theta=None, dt=None, n_steps=None) -> SchemeConfig:
    return SchemeConfig(
        theta=rc.theta if theta is None else theta,
        dt=rc.dt if dt is None else dt,
        n_steps=rc.n_steps if n_steps is None else n_steps,
        scheme=rc.scheme,
        newton_tol=rc.newton_tol,
        newton_max_iter=rc.newton_max_iter,
        seed=rc.seed,
        imex_reaction_weight=rc.imex_reaction_weight)


def _analysis_noise_class(rc: RunConfig) -> str:
    return "additive" if rc.noise_kind == "additive" else "multiplicative"


def _resolve_m_variant(rc: RunConfig) -> str:
    if rc.m_variant != "auto":
        return rc.m_variant
    if rc.scheme == "theta_maruyama" and rc.noise_kind == "additive":
        return VARIANT_NORM_SQUARED
    return VARIANT_NORM


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_analyze(rc: RunConfig, out_dir: Path, timestamp: bool) -> int:
    problem = _build_problem(rc, rc.n_points)
    cfg = _scheme_config(rc)
    u0, _ = initial_pair(problem)
    variant = _resolve_m_variant(rc)
    constants, estimate = derive_constants(
        problem, cfg, u0, n_paths=rc.analyze_n_paths, variant=variant)
    report = evaluate_predicates(
        constants, rc.scheme, _analysis_noise_class(rc), rc.theta, rc.dt,
        problem.grid.dx, p=problem.operator_order, n_steps=rc.n_steps)
    payload = report.to_json_dict()
    payload.update({
        "problem": problem.name,
        "operator_norm": constants.operator_norm,
        "jacobian_bound": constants.jacobian_bound,
        "jacobian_bound_kind": constants.jacobian_bound_kind,
        "diffusion_lipschitz": constants.diffusion_lipschitz,
        "reaction_one_sided": constants.reaction_one_sided,
        "diffusion_lipschitz_sq": constants.diffusion_lipschitz_sq,
        "estimate_std_error": estimate.std_error,
        "estimate_blowup_fraction": estimate.blowup_fraction,
        "estimate_reliable": estimate.reliable,
    })
    _write_json(payload, out_dir / "analyze_report.json")

    print(f"problem {problem.name}: scheme {rc.scheme}, "
          f"noise {_analysis_noise_class(rc)}, theta={rc.theta:g}, "
          f"dt={rc.dt:g}, dx={problem.grid.dx:g}")
    print(f"operator norm {constants.operator_norm:.6g}, "
          f"jacobian bound {constants.jacobian_bound:.6g} ({variant})")
    if not estimate.reliable:
        print(f"warning: {estimate.blowup_fraction:.0%} of sampling paths "
              "blew up; the jacobian bound is unreliable")
    for name, value in report.predicates.items():
        print(f"condition {name}: {'holds' if value else 'fails'}")
    if report.alpha is not None:
        print(f"per-step factor alpha = {report.alpha:.6g}"
              + (f", alpha^{rc.n_steps} = {report.alpha_n_steps:.6g}"
                 if report.alpha_n_steps is not None else ""))
    if report.gamma is not None:
        print(f"one-sided-setting factor gamma = {report.gamma:.6g}")
    if report.verdict == "indeterminate":
        if rc.scheme == "theta_maruyama" and rc.theta == 0.5:
            print("verdict: indeterminate (theta = 1/2 sits outside the "
                  "stepsize case analysis for this scheme and needs separate "
                  "treatment)")
        else:
            print("verdict: indeterminate (a denominator of the estimates "
                  "vanished at these parameters)")
    else:
        deciding = next(iter(report.predicates))
        print(f"verdict: {report.verdict} (condition {deciding} "
              f"{'holds' if report.predicates[deciding] else 'fails'}, "
              f"alpha {'<' if report.alpha < 1 else '>='} 1)")
    return EXIT_OK


def _export_estimate(est: MsdEstimate, out_dir: Path, stem: str,
                     timestamp: bool) -> None:
    export_csv(est, out_dir / f"{stem}.csv", timestamp=timestamp)


def cmd_msd(rc: RunConfig, out_dir: Path, timestamp: bool) -> int:
    problem = _build_problem(rc, rc.n_points)
    cfg = _scheme_config(rc)
    u0, y0 = initial_pair(problem)
    code = EXIT_OK
    try:
        est = run_msd(problem, cfg, u0, y0, rc.n_paths, rc.norm_scaling)
    except AllPathsBlewUpError as exc:
        est = exc.estimate
        code = EXIT_BLOWUP
        print(f"warning: {exc}", file=sys.stderr)
    _export_estimate(est, out_dir, "msd", timestamp)
    export_plot_script(est, out_dir / "msd.gp", "msd.csv",
                       labels=[f"dx={problem.grid.dx:g}"])
    if est.blowup_fraction > 0.5:
        code = max(code, EXIT_BLOWUP)
    print(f"msd[0] = {est.msd[0]:.6g}, msd[{est.n_steps}] = "
          f"{est.msd[-1]:.6g}, blowup fraction {est.blowup_fraction:.3f}")
    print(f"wrote {out_dir / 'msd.csv'} and {out_dir / 'msd.gp'}")
    return code


def cmd_sweep(rc: RunConfig, out_dir: Path, timestamp: bool) -> int:
    code = EXIT_OK
    estimates, csv_names, labels = [], [], []
    for n_points in rc.n_points_list:
        problem = _build_problem(rc, n_points)
        cfg = _scheme_config(rc)
        u0, y0 = initial_pair(problem)
        try:
            est = run_msd(problem, cfg, u0, y0, rc.n_paths, rc.norm_scaling)
        except AllPathsBlewUpError as exc:
            est = exc.estimate
            code = EXIT_BLOWUP
            print(f"warning: grid {n_points}: {exc}", file=sys.stderr)
        if est.blowup_fraction > 0.5:
            code = max(code, EXIT_BLOWUP)
        stem = f"sweep_n{n_points}"
        _export_estimate(est, out_dir, stem, timestamp)
        estimates.append(est)
        csv_names.append(f"{stem}.csv")
        labels.append(f"dx={problem.grid.dx:g}")
        print(f"grid {n_points}: msd[0] = {est.msd[0]:.6g}, "
              f"msd[{est.n_steps}] = {est.msd[-1]:.6g}, "
              f"blowup fraction {est.blowup_fraction:.3f}")
    export_plot_script(estimates, out_dir / "sweep.gp", csv_names, labels=labels)
    print(f"wrote {len(estimates)} csv files and {out_dir / 'sweep.gp'}")
    return code


def cmd_order(rc: RunConfig, out_dir: Path, timestamp: bool) -> int:
    problem = _build_problem(rc, rc.n_points)
    dts = [rc.order_t_final * 2.0**-e for e in rc.order_dt_exponents]
    result = strong_order(
        problem, rc.order_theta, dts, rc.order_n_paths, rc.order_t_final,
        scheme=rc.scheme, seed=rc.seed, newton_tol=rc.newton_tol,
        newton_max_iter=rc.newton_max_iter)
    lines = ["dt,endpoint_rms_error"]
    for dt, err in result.errors:
        lines.append("%.17g,%.17g" % (dt, err))
    (out_dir / "order.csv").write_text("\n".join(lines) + "\n")
    for dt, err in result.errors:
        print(f"dt = {dt:.6g}: endpoint rms error {err:.6g}")
    print(f"empirical strong order (log-log slope): {result.slope:.4f} "
          f"from {result.n_paths_used} paths")
    return EXIT_OK


def cmd_simulate(rc: RunConfig, out_dir: Path, timestamp: bool) -> int:
    problem = _build_problem(rc, rc.n_points)
    cfg = _scheme_config(rc)
    u0, y0 = initial_pair(problem)
    tr = simulate_pair(problem, cfg, u0, y0, record_states=False)
    lines = []
    if timestamp:
        from datetime import datetime, timezone
        now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(f"# generated: {now}")
    lines.append("step,time,z_sqnorm,newton_iters_u,newton_iters_y")
    iters = np.vstack([tr.newton_iters, [[0, 0]]])
    for n in range(tr.times.size):
        lines.append("%d,%.17g,%.17g,%d,%d"
                     % (n, tr.times[n], tr.z_sqnorms[n], iters[n, 0], iters[n, 1]))
    (out_dir / "simulate.csv").write_text("\n".join(lines) + "\n")
    if tr.blowup_step is not None:
        print(f"pair blew up at step {tr.blowup_step}")
        print(f"wrote {out_dir / 'simulate.csv'}")
        return EXIT_BLOWUP
    print(f"z_sqnorm[0] = {tr.z_sqnorms[0]:.6g}, "
          f"z_sqnorm[{cfg.n_steps}] = {tr.z_sqnorms[-1]:.6g}")
    print(f"wrote {out_dir / 'simulate.csv'}")
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze,
    "msd": cmd_msd,
    "sweep": cmd_sweep,
    "order": cmd_order,
    "simulate": cmd_simulate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdsde",
        description="Dissipativity experiments for stochastic "
                    "reaction-diffusion discretizations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("analyze", "evaluate contractivity conditions and write a JSON report"),
        ("msd", "estimate the mean-square deviation of a coupled pair ensemble"),
        ("sweep", "run msd across several grids"),
        ("order", "measure the empirical strong convergence order"),
        ("simulate", "dump a single coupled-pair trajectory"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--paths", type=int, default=None,
                       help="override the configured number of paths")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--no-timestamp", action="store_true",
                       help="omit the timestamp comment from CSV output")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = parse_config(args.config)
        if args.paths is not None:
            if args.paths < 2 and args.command in ("msd", "sweep"):
                raise ConfigError("--paths must be >= 2 for msd experiments")
            rc.n_paths = args.paths
            rc.analyze_n_paths = args.paths
            rc.order_n_paths = args.paths
        if args.seed is not None:
            rc.seed = args.seed
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](rc, out_dir, not args.no_timestamp)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllPathsBlewUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # expected failures are handled above
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
