"""Mean-square contractivity analysis of the discretized schemes.

The module evaluates the per-step amplification factors of the expected
squared distance between two solutions driven by the same noise, the
stepsize inequalities deciding whether that distance contracts, and the
corresponding factor in the one-sided Lipschitz setting.  The constant M
(a Monte Carlo bound on the reaction Jacobian norm along trajectories)
comes in two variants, mean norm and mean squared norm; each factor
documents which variant it pairs with.

Everything here is plain arithmetic on an AnalysisConstants bundle except
estimate_jacobian_bound / derive_constants, which sample trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import BandLU, BandMatrix, band_lu_factor, spectral_norm
from .integrators import (SchemeConfig, _run_with_increments, pair_increments,
                          parallel_path_map)
from .problems import SemiDiscreteProblem

__all__ = [
    "AnalysisConstants", "OperatorStepBounds", "ContractivityReport",
    "JacobianBoundEstimate", "UnsupportedCombinationError",
    "VARIANT_NORM", "VARIANT_NORM_SQUARED",
    "factor_implicit_operator", "one_step_operator_bounds",
    "amplification_theta_additive", "amplification_theta_multiplicative",
    "amplification_imex_additive", "amplification_imex_multiplicative",
    "monotonicity_factor", "evaluate_predicates", "problem_is_dissipative",
    "estimate_jacobian_bound", "derive_constants",
]

VARIANT_NORM = "expectation_of_norm"
VARIANT_NORM_SQUARED = "expectation_of_norm_squared"
SCHEME_NAMES = ("theta_maruyama", "theta_imex")
NOISE_NAMES = ("additive", "multiplicative")


class UnsupportedCombinationError(ValueError):
    """Raised for scheme/noise pairs the analysis does not define."""


@dataclass(frozen=True)
class AnalysisConstants:
    """Problem constants feeding the contractivity formulas.

    operator_norm        two-norm of the stiffness matrix A
    jacobian_bound       M: sampled bound on the reaction Jacobian norm
    jacobian_bound_kind  which expectation produced M (norm vs squared norm)
    diffusion_lipschitz  local Lipschitz constant of the noise amplitude
    reaction_one_sided   one-sided Lipschitz constant of the reaction
    diffusion_lipschitz_sq  mean-square Lipschitz constant of the noise map
    """

    operator_norm: float
    jacobian_bound: float = 0.0
    jacobian_bound_kind: str = VARIANT_NORM_SQUARED
    diffusion_lipschitz: float = 0.0
    reaction_one_sided: float = 0.0
    diffusion_lipschitz_sq: float = 0.0

    def __post_init__(self):
        if self.operator_norm < 0.0 or self.jacobian_bound < 0.0:
            raise ValueError("operator_norm and jacobian_bound must be >= 0")
        if self.diffusion_lipschitz < 0.0 or self.diffusion_lipschitz_sq < 0.0:
            raise ValueError("Lipschitz constants must be >= 0")
        if self.jacobian_bound_kind not in (VARIANT_NORM, VARIANT_NORM_SQUARED):
            raise ValueError(
                f"jacobian_bound_kind must be {VARIANT_NORM!r} or "
                f"{VARIANT_NORM_SQUARED!r}, got {self.jacobian_bound_kind!r}")

    @property
    def drift_one_sided(self) -> float:
        """One-sided Lipschitz constant of the whole drift -A@x + R(x)."""
        return self.operator_norm + self.reaction_one_sided


def factor_implicit_operator(a: BandMatrix, theta: float, dt: float) -> BandLU:
    """Factor I + theta*dt*A for repeated banded solves.

    theta = 0 yields the identity map.  Raises SingularMatrixError when the
    shifted operator is singular.
    """
    bands = theta * dt * a.bands
    bands[a.half_bandwidth, :] += 1.0
    return band_lu_factor(BandMatrix(a.dim, a.half_bandwidth, bands))


@dataclass(frozen=True)
class OperatorStepBounds:
    """Norm bounds for the implicit solve and the one-step propagator.

    inverse_bound covers (I+theta*dt*A)^-1 and propagator_bound covers
    (I+theta*dt*A)^-1 (I-(1-theta)*dt*A); both only hold (valid=True) while
    theta*dt*norm < 1.  Values are reported verbatim even when invalid.
    """

    inverse_bound: float
    propagator_bound: float
    valid: bool


def one_step_operator_bounds(operator_norm: float, theta: float,
                             dt: float) -> OperatorStepBounds:
    s = theta * dt * operator_norm
    denom = 1.0 - s
    if denom == 0.0:
        return OperatorStepBounds(math.inf, math.inf, False)
    return OperatorStepBounds(
        inverse_bound=1.0 / denom,
        propagator_bound=(1.0 + (1.0 - theta) * dt * operator_norm) / denom,
        valid=s < 1.0)


def amplification_theta_additive(c: AnalysisConstants, theta: float,
                                 dt: float) -> float:
    """Per-step mean-square amplification, fully implicit drift, additive noise.

    Pairs with the squared-norm variant of the Jacobian bound.
    """
    s = c.operator_norm + c.jacobian_bound
    denom = 1.0 - theta * dt * s
    if denom == 0.0:
        raise ZeroDivisionError("1 - theta*dt*(operator_norm + jacobian_bound) vanishes")
    return ((1.0 + (1.0 - theta) * dt * s) / denom) ** 2


def amplification_theta_multiplicative(c: AnalysisConstants, theta: float,
                                       dt: float) -> float:
    """As the additive variant plus the noise term; pairs with the mean-norm M."""
    s = c.operator_norm + c.jacobian_bound
    denom = 1.0 - theta * dt * s
    if denom == 0.0:
        raise ZeroDivisionError("1 - theta*dt*(operator_norm + jacobian_bound) vanishes")
    num = (1.0 + (1.0 - theta) * dt * s) ** 2 + c.diffusion_lipschitz**2 * dt
    return num / denom**2


def amplification_imex_additive(c: AnalysisConstants, theta: float,
                                dt: float) -> float:
    """Per-step amplification with explicit reaction; pairs with the mean-norm M."""
    denom = 1.0 - theta * dt * c.operator_norm
    if denom == 0.0:
        raise ZeroDivisionError("1 - theta*dt*operator_norm vanishes")
    num = 1.0 + (1.0 - theta) * dt * c.operator_norm + dt * c.jacobian_bound
    return (num / denom) ** 2


def amplification_imex_multiplicative(c: AnalysisConstants, theta: float,
                                      dt: float) -> float:
    denom = 1.0 - theta * dt * c.operator_norm
    if denom == 0.0:
        raise ZeroDivisionError("1 - theta*dt*operator_norm vanishes")
    num = (1.0 + (1.0 - theta) * dt * c.operator_norm + dt * c.jacobian_bound) ** 2
    return (num + c.diffusion_lipschitz**2 * dt) / denom**2


def monotonicity_factor(c: AnalysisConstants, theta: float, dt: float) -> float:
    """Per-step factor in the one-sided Lipschitz setting (implicit drift).

    Uses the squared-norm Jacobian bound together with the one-sided constants;
    note the mixed first-order/second-order grouping in the dt^2 term, kept
    verbatim from the derivation of the squared difference recursion.
    """
    mu_star = c.drift_one_sided
    denom = 1.0 - 2.0 * theta * dt * mu_star
    if denom == 0.0:
        raise ZeroDivisionError("1 - 2*theta*dt*drift_one_sided vanishes")
    num = (1.0
           + (1.0 - theta) ** 2 * dt**2 * (c.operator_norm**2 + c.jacobian_bound
                                           + 2.0 * c.operator_norm * c.reaction_one_sided)
           + c.diffusion_lipschitz_sq * dt
           + (1.0 - theta) * dt * mu_star)
    return num / denom


def problem_is_dissipative(c: AnalysisConstants) -> bool:
    """Mean-square dissipativity of the semi-discrete problem itself."""
    return 2.0 * c.drift_one_sided + c.diffusion_lipschitz_sq < 0.0


@dataclass
class ContractivityReport:
    """Outcome of evaluate_predicates, serializable as one flat JSON object.

    predicates maps inequality tags to booleans; dt_bound (with its kind,
    "upper" or "lower") and dx_bound carry the stepsize thresholds where the
    matching case analysis states one.  alpha_n_steps = alpha**n_steps when a
    horizon was given.  valid means every denominator 1 - theta*dt*(...) is
    nonzero, so the factors are well defined; lemma_bounds_hold additionally
    requires them positive, the regime where the norm estimates behind alpha
    are proved.  The stepsize inequalities can only hold outside that regime
    for the fully implicit scheme, so alpha is compared against 1 whenever it
    is well defined and lemma_bounds_hold is reported alongside.
    """

    scheme: str
    noise: str
    theta: float
    dt: float
    dx: float
    alpha: float | None
    gamma: float | None
    predicates: dict = field(default_factory=dict)
    dt_bound: float | None = None
    dt_bound_kind: str | None = None
    dx_bound: float | None = None
    valid: bool = True
    lemma_bounds_hold: bool = True
    verdict: str = "indeterminate"
    alpha_n_steps: float | None = None

    def to_json_dict(self) -> dict:
        out = {
            "scheme": self.scheme,
            "noise": self.noise,
            "theta": self.theta,
            "dt": self.dt,
            "dx": self.dx,
            "alpha": self.alpha,
            "gamma": self.gamma,
        }
        out.update(self.predicates)
        out.update({
            "dt_bound": self.dt_bound,
            "dt_bound_kind": self.dt_bound_kind,
            "dx_bound": self.dx_bound,
            "valid": self.valid,
            "lemma_bounds_hold": self.lemma_bounds_hold,
            "verdict": self.verdict,
            "alpha_n_steps": self.alpha_n_steps,
        })
        return out


def _dt_dx_bounds(c: AnalysisConstants, scheme: str, noise: str, theta: float,
                  dx: float, p: int):
    """Stepsize thresholds printed by the case analysis; None when absent."""
    a = c.operator_norm
    m = c.jacobian_bound
    lg = c.diffusion_lipschitz
    dt_bound = dt_kind = dx_bound = None
    if scheme == "theta_maruyama":
        s = a + m
        if noise == "additive" and s > 0.0 and theta != 0.5:
            if theta < 0.5:
                dt_bound, dt_kind = -2.0 / ((1.0 - 2.0 * theta) * s), "upper"
            else:
                dt_bound, dt_kind = 2.0 / ((2.0 * theta - 1.0) * s), "lower"
        elif noise == "multiplicative" and s > 0.0 and theta != 0.5:
            bound = -(2.0 * s + lg**2) / ((1.0 - 2.0 * theta) * s**2)
            dt_bound, dt_kind = bound, ("upper" if theta < 0.5 else "lower")
    else:
        if noise == "additive":
            if theta < 0.5:
                den = (1.0 - 2.0 * theta) * a + m
                if den != 0.0:
                    dt_bound, dt_kind = -2.0 / den, "upper"
            elif m > 0.0:
                # restriction moves to space: dx**p below (2*theta-1)*|B|/M
                # with |B| = dx**p * |A| the scale-free stencil norm
                dx_bound = ((2.0 * theta - 1.0) * dx**p * a / m) ** (1.0 / p)
        else:
            if theta < 0.5:
                den = m**2 + (1.0 - 2.0 * theta) * a**2 + 2.0 * (1.0 - theta) * m * a
                if den != 0.0:
                    dt_bound = -(2.0 * (m + a) + lg**2) / den
                    dt_kind = "upper"
    return dt_bound, dt_kind, dx_bound


def evaluate_predicates(c: AnalysisConstants, scheme: str, noise: str,
                        theta: float, dt: float, dx: float, p: int = 2,
                        n_steps: int | None = None) -> ContractivityReport:
    """Evaluate the contractivity inequalities for one scheme/noise pair.

    The verdict compares the per-step amplification factor against 1; it is
    indeterminate when a denominator vanishes, and for the fully coupled
    scheme at theta = 1/2, which the case analysis explicitly skips.  The
    stepsize inequalities imply alpha < 1 by construction, so predicate and
    verdict agree wherever both are decided.
    """
    if scheme not in SCHEME_NAMES:
        raise UnsupportedCombinationError(f"unknown scheme {scheme!r}")
    if noise not in NOISE_NAMES:
        raise UnsupportedCombinationError(f"unknown noise {noise!r}")
    a = c.operator_norm
    m = c.jacobian_bound
    lg = c.diffusion_lipschitz
    preds: dict[str, bool] = {}
    gamma = None
    if scheme == "theta_maruyama":
        s = a + m
        valid = 1.0 - theta * dt * s != 0.0
        lemma_ok = 1.0 - theta * dt * s > 0.0
        if noise == "additive":
            alpha = _safe(amplification_theta_additive, c, theta, dt)
            preds["eqpar"] = (1.0 - 2.0 * theta) * dt * s < -2.0
        else:
            alpha = _safe(amplification_theta_multiplicative, c, theta, dt)
            preds["eqpar2multheta"] = (
                dt * (2.0 * s + dt * (1.0 - 2.0 * theta) * s**2 + lg**2) < 0.0)
        mu_star = c.drift_one_sided
        preds["condcontr"] = (
            (1.0 - theta) ** 2 * dt * (a**2 + m + 2.0 * a * c.reaction_one_sided)
            + c.diffusion_lipschitz_sq + (1.0 - theta) * mu_star
            < -2.0 * theta * mu_star)
        gamma = _safe(monotonicity_factor, c, theta, dt)
        indeterminate = not valid or theta == 0.5
    else:
        valid = 1.0 - theta * dt * a != 0.0
        lemma_ok = 1.0 - theta * dt * a > 0.0
        if noise == "additive":
            alpha = _safe(amplification_imex_additive, c, theta, dt)
            preds["eqpar3"] = (
                dt * (2.0 * (1.0 - theta * dt * a) + dt * (a + m)) < 0.0)
            preds["eqpar2bis"] = 2.0 + dt * (m + (1.0 - 2.0 * theta) * a) < 0.0
        else:
            alpha = _safe(amplification_imex_multiplicative, c, theta, dt)
            preds["eqpar2"] = (
                dt * (dt * (m**2 + (1.0 - 2.0 * theta) * a**2
                            + 2.0 * (1.0 - theta) * m * a)
                      + 2.0 * m + 2.0 * a + lg**2) < 0.0)
        indeterminate = not valid
    if indeterminate or alpha is None:
        verdict = "indeterminate"
    else:
        verdict = "contractive" if alpha < 1.0 else "not_contractive"
    dt_bound, dt_kind, dx_bound = _dt_dx_bounds(c, scheme, noise, theta, dx, p)
    alpha_pow = None
    if alpha is not None and n_steps:
        try:
            alpha_pow = alpha**n_steps
        except OverflowError:        # float pow raises rather than saturating
            alpha_pow = math.inf
    return ContractivityReport(
        scheme=scheme, noise=noise, theta=theta, dt=dt, dx=dx,
        alpha=alpha, gamma=gamma, predicates=preds,
        dt_bound=dt_bound, dt_bound_kind=dt_kind, dx_bound=dx_bound,
        valid=valid, lemma_bounds_hold=lemma_ok, verdict=verdict,
        alpha_n_steps=alpha_pow)


def _safe(fn, c, theta, dt):
    try:
        return fn(c, theta, dt)
    except ZeroDivisionError:
        return None


@dataclass
class JacobianBoundEstimate:
    """Monte Carlo estimate of the Jacobian norm bound M.

    value is max over steps of the across-path mean of the reaction Jacobian
    norm (squared, for that variant); std_error belongs to the maximizing
    step.  reliable is False when more than half the paths blew up.
    """

    value: float
    std_error: float
    variant: str
    n_paths: int
    argmax_step: int
    blowup_fraction: float
    reliable: bool
    sample_radius: float
    one_sided_sample: float | None = None


def _sample_jacobian_stats(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                           x0: np.ndarray, n_paths: int, seed: int,
                           squared: bool, want_one_sided: bool):
    """Per-path, per-step Jacobian norms along simulated trajectories."""
    n_rec = cfg.n_steps + 1

    def one_path(j):
        dws = pair_increments(seed, j, cfg.n_steps, problem.state_dim, cfg.dt)
        states, _, blow = _run_with_increments(problem, cfg, x0, dws)
        n_valid = n_rec if blow is None else blow
        vals = np.full(n_rec, np.nan)
        one_sided = -math.inf
        radius = 0.0
        # states just before a blow-up can overflow the norm computations;
        # inf entries are honest data for a diverging path
        with np.errstate(over="ignore", invalid="ignore"):
            for n in range(n_valid):
                jac = problem.reaction_jacobian(states[n])
                nrm = jac.two_norm()
                vals[n] = nrm * nrm if squared else nrm
                if want_one_sided:
                    one_sided = max(one_sided, jac.sym_max_eigenvalue())
                radius = max(radius, float(np.max(np.abs(states[n]))))
        return vals, one_sided, radius, blow is not None

    rows = parallel_path_map(one_path, n_paths)
    vals = np.stack([r[0] for r in rows])
    one_sided = max(r[1] for r in rows) if want_one_sided else None
    radius = max(r[2] for r in rows)
    n_blown = sum(r[3] for r in rows)
    return vals, one_sided, radius, n_blown


def estimate_jacobian_bound(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                            x0: np.ndarray, n_paths: int,
                            variant: str = VARIANT_NORM_SQUARED,
                            seed: int | None = None) -> JacobianBoundEstimate:
    """Estimate M by simulating trajectories and tracking reaction Jacobian norms.

    Per step the norm (or squared norm) is averaged across the paths still
    alive; the estimate is the maximum of those means over all steps, with
    the standard error taken at the maximizing step.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if variant not in (VARIANT_NORM, VARIANT_NORM_SQUARED):
        raise ValueError(f"unknown variant {variant!r}")
    if seed is None:
        seed = cfg.seed
    vals, one_sided, radius, n_blown = _sample_jacobian_stats(
        problem, cfg, np.ascontiguousarray(x0, dtype=float), n_paths, seed,
        squared=(variant == VARIANT_NORM_SQUARED),
        want_one_sided=problem.one_sided_exact is None)
    # pre-blow-up samples can be huge; overflow to inf in the aggregates is
    # honest data there, so keep numpy quiet
    with np.errstate(over="ignore", invalid="ignore"):
        alive = np.isfinite(vals)
        counts = alive.sum(axis=0)
        sums = np.where(alive, vals, 0.0).sum(axis=0)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), -np.inf)
        step = int(np.argmax(means))
        value = float(means[step])
        col = vals[alive[:, step], step]
        if col.size > 1:
            std_error = float(np.std(col, ddof=1) / np.sqrt(col.size))
        else:
            std_error = 0.0
    frac = n_blown / n_paths
    return JacobianBoundEstimate(
        value=value, std_error=std_error, variant=variant, n_paths=n_paths,
        argmax_step=step, blowup_fraction=frac, reliable=frac <= 0.5,
        sample_radius=radius, one_sided_sample=one_sided)


def derive_constants(problem: SemiDiscreteProblem, cfg: SchemeConfig,
                     x0: np.ndarray, n_paths: int = 100,
                     variant: str = VARIANT_NORM_SQUARED,
                     seed: int | None = None):
    """Assemble AnalysisConstants for a problem, sampling what has no closed form.

    Returns (constants, estimate).  The operator norm uses the closed form
    when the problem carries one, otherwise power iteration.  The one-sided
    reaction constant falls back to the largest sampled eigenvalue of the
    symmetrized Jacobian.  For quadratic noise the Lipschitz constant is the
    local one on the sampled radius; custom noise maps need explicitly
    provided constants and are rejected here.
    """
    if problem.noise.kind == "custom":
        raise UnsupportedCombinationError(
            "cannot derive Lipschitz constants for a custom noise map; "
            "build AnalysisConstants directly")
    est = estimate_jacobian_bound(problem, cfg, x0, n_paths, variant, seed)
    if problem.operator_norm_exact is not None:
        op_norm = problem.operator_norm_exact
    else:
        op_norm = spectral_norm(problem.operator)
    scale = problem.noise_scale
    if problem.noise.kind == "additive":
        lg = 0.0
    elif problem.noise.kind == "mult_linear":
        lg = scale
    else:
        lg = 2.0 * est.sample_radius * scale
    mu = (problem.one_sided_exact if problem.one_sided_exact is not None
          else float(est.one_sided_sample))
    constants = AnalysisConstants(
        operator_norm=float(op_norm),
        jacobian_bound=max(est.value, 0.0),
        jacobian_bound_kind=variant,
        diffusion_lipschitz=lg,
        reaction_one_sided=mu,
        diffusion_lipschitz_sq=lg**2)
    return constants, est
