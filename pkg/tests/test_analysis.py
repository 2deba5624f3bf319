"""Contractivity constants, amplification factors, predicates, M estimation."""
import math

import numpy as np
import pytest

from rdsde.analysis import (VARIANT_NORM, VARIANT_NORM_SQUARED,
                            AnalysisConstants, UnsupportedCombinationError,
                            amplification_imex_additive,
                            amplification_imex_multiplicative,
                            amplification_theta_additive,
                            amplification_theta_multiplicative,
                            derive_constants, estimate_jacobian_bound,
                            evaluate_predicates, factor_implicit_operator,
                            monotonicity_factor, one_step_operator_bounds,
                            problem_is_dissipative)
from rdsde.grid import BandMatrix, assemble_neg_laplacian, build_grid
from rdsde.integrators import SchemeConfig
from rdsde.problems import (DiagonalJacobian, NoiseKind, make_cahn_hilliard,
                            make_custom, make_ginzburg_landau)

# hand-transcribed closed forms, kept as single expressions on purpose so the
# library implementation is checked against independently written arithmetic
ORACLE_THETA_ADD = lambda a, m, th, dt: (
    ((1 + (1 - th) * dt * (a + m)) / (1 - th * dt * (a + m))) ** 2)
ORACLE_THETA_MUL = lambda a, m, lg, th, dt: (
    ((1 + (1 - th) * dt * (a + m)) ** 2 + lg**2 * dt)
    / (1 - th * dt * (a + m)) ** 2)
ORACLE_IMEX_ADD = lambda a, m, th, dt: (
    ((1 + (1 - th) * dt * a + dt * m) / (1 - th * dt * a)) ** 2)
ORACLE_IMEX_MUL = lambda a, m, lg, th, dt: (
    ((1 + (1 - th) * dt * a + dt * m) ** 2 + lg**2 * dt)
    / (1 - th * dt * a) ** 2)
ORACLE_GAMMA = lambda a, m, nu, lsq, th, dt: (
    (1 + (1 - th) ** 2 * dt**2 * (a**2 + m + 2 * a * nu) + lsq * dt
     + (1 - th) * dt * (a + nu)) / (1 - 2 * th * dt * (a + nu)))


def consts(a=0.0, m=0.0, lg=0.0, nu=0.0, lsq=0.0):
    return AnalysisConstants(operator_norm=a, jacobian_bound=m,
                             diffusion_lipschitz=lg, reaction_one_sided=nu,
                             diffusion_lipschitz_sq=lsq)


class TestAmplificationFactors:
    def test_worked_examples(self):
        c = consts(a=2.0, m=0.0)
        assert amplification_theta_additive(c, 1.0, 0.1) == pytest.approx(1.5625, rel=1e-12)
        assert amplification_theta_additive(c, 0.0, 0.1) == pytest.approx(1.44, rel=1e-12)
        cm = consts(a=2.0, m=0.0, lg=1.0)
        assert amplification_theta_multiplicative(cm, 1.0, 0.1) == pytest.approx(1.71875, rel=1e-12)
        ci = consts(a=2.0, m=1.0)
        assert amplification_imex_additive(ci, 1.0, 0.1) == pytest.approx(1.890625, rel=1e-12)
        cim = consts(a=2.0, m=1.0, lg=1.0)
        assert amplification_imex_multiplicative(cim, 1.0, 0.1) == pytest.approx(2.046875, rel=1e-12)

    def test_monotonicity_worked_example(self):
        c = consts(a=1.0, m=1.0, nu=-3.0, lsq=0.5)
        assert monotonicity_factor(c, 0.0, 0.1) == pytest.approx(0.81, rel=1e-12)

    def test_zero_stepsize_is_neutral(self):
        c = consts(a=3.0, m=2.0, lg=1.5, nu=-1.0, lsq=0.25)
        for fn in (amplification_theta_additive, amplification_theta_multiplicative,
                   amplification_imex_additive, amplification_imex_multiplicative,
                   monotonicity_factor):
            assert fn(c, 0.7, 0.0) == 1.0

    def test_matches_independent_arithmetic(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 2000:
            a = 5.0 * rng.random()
            m = 3.0 * rng.random()
            lg = 2.0 * rng.random()
            nu = rng.uniform(-4.0, 1.0)
            lsq = rng.random()
            th = rng.random()
            dt = rng.uniform(1e-4, 2.0)
            if (abs(1 - th * dt * (a + m)) < 1e-3 or abs(1 - th * dt * a) < 1e-3
                    or abs(1 - 2 * th * dt * (a + nu)) < 1e-3):
                continue
            c = consts(a, m, lg, nu, lsq)
            assert amplification_theta_additive(c, th, dt) == pytest.approx(
                ORACLE_THETA_ADD(a, m, th, dt), rel=1e-12)
            assert amplification_theta_multiplicative(c, th, dt) == pytest.approx(
                ORACLE_THETA_MUL(a, m, lg, th, dt), rel=1e-12)
            assert amplification_imex_additive(c, th, dt) == pytest.approx(
                ORACLE_IMEX_ADD(a, m, th, dt), rel=1e-12)
            assert amplification_imex_multiplicative(c, th, dt) == pytest.approx(
                ORACLE_IMEX_MUL(a, m, lg, th, dt), rel=1e-12)
            assert monotonicity_factor(c, th, dt) == pytest.approx(
                ORACLE_GAMMA(a, m, nu, lsq, th, dt), rel=1e-12)
            checked += 1

    def test_noise_term_only_adds(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a, m = 4.0 * rng.random(), 2.0 * rng.random()
            th, dt = rng.random(), rng.uniform(1e-3, 0.2)
            lg = 1.5 * rng.random()
            mul = amplification_theta_multiplicative(consts(a, m, lg), th, dt)
            add = amplification_theta_additive(consts(a, m), th, dt)
            if lg == 0.0:
                assert mul == add
            else:
                assert mul > add

    def test_small_steps_always_amplify(self):
        # every scheme/noise pair expands at leading order in dt when the
        # drift constants are positive; contraction needs a large implicit step
        c = consts(a=2.0, m=1.0, lg=0.5)
        for fn in (amplification_theta_additive, amplification_theta_multiplicative,
                   amplification_imex_additive, amplification_imex_multiplicative):
            for th in (0.0, 0.25, 0.5, 0.75, 1.0):
                assert fn(c, th, 1e-4) > 1.0

    def test_fully_implicit_contracts_past_threshold(self):
        c = consts(a=2.0, m=1.0)    # threshold dt = 2/(a+m)
        dts = 2.0 / 3.0
        assert amplification_theta_additive(c, 1.0, 0.9 * dts) > 1.0
        assert amplification_theta_additive(c, 1.0, 1.1 * dts) < 1.0

    def test_vanishing_denominator_raises(self):
        c = consts(a=4.0)
        with pytest.raises(ZeroDivisionError):
            amplification_theta_additive(c, 1.0, 0.25)
        with pytest.raises(ZeroDivisionError):
            amplification_imex_multiplicative(c, 0.5, 0.5)
        with pytest.raises(ZeroDivisionError):
            monotonicity_factor(consts(a=1.0), 0.5, 1.0)

    def test_gamma_fully_implicit_shape(self):
        # at theta=1 the factor collapses to (1 + Lsq*dt)/(1 - 2*dt*mu); its
        # position relative to 1 is decided by the sign of Lsq + 2*mu
        for nu, lsq in ((-3.0, 0.5), (-0.2, 1.0), (-1.0, 2.0)):
            c = consts(a=0.0, nu=nu, lsq=lsq)
            mu = c.drift_one_sided
            for dt in (0.01, 0.1, 0.5, 1.0):
                got = monotonicity_factor(c, 1.0, dt)
                assert got == pytest.approx((1 + lsq * dt) / (1 - 2 * dt * mu), rel=1e-13)
                if lsq + 2 * mu < 0:
                    assert got < 1.0
                elif lsq + 2 * mu > 0:
                    assert got > 1.0


class TestOperatorStepBounds:
    def test_explicit_case(self):
        b = one_step_operator_bounds(3.0, 0.0, 0.25)
        assert b.inverse_bound == 1.0
        assert b.propagator_bound == 1.75
        assert b.valid

    def test_zero_stepsize(self):
        b = one_step_operator_bounds(10.0, 1.0, 0.0)
        assert (b.inverse_bound, b.propagator_bound, b.valid) == (1.0, 1.0, True)

    def test_invalid_past_unity(self):
        assert not one_step_operator_bounds(4.0, 1.0, 0.5).valid
        b = one_step_operator_bounds(4.0, 1.0, 0.25)
        assert b.inverse_bound == math.inf and not b.valid


class TestFactorImplicitOperator:
    def test_scalar_case(self):
        a = BandMatrix(1, 0, np.array([[4.0]]))
        lu = factor_implicit_operator(a, 0.5, 0.5)
        assert lu.solve(np.array([3.0]))[0] == pytest.approx(1.5, rel=1e-15)

    def test_theta_zero_is_identity(self):
        grid = build_grid(0.0, 1.0, 10)
        a = assemble_neg_laplacian(grid)
        lu = factor_implicit_operator(a, 0.0, 0.7)
        rhs = np.linspace(-1.0, 1.0, grid.n_unknowns)
        assert np.allclose(lu.solve(rhs), rhs, rtol=0.0, atol=1e-14)

    def test_matches_dense_solve(self):
        grid = build_grid(0.0, 1.0, 14)
        a = assemble_neg_laplacian(grid)
        theta, dt = 0.6, 0.003
        lu = factor_implicit_operator(a, theta, dt)
        dense = np.eye(grid.n_unknowns) + theta * dt * a.to_dense()
        rng = np.random.default_rng(0)
        for _ in range(5):
            rhs = rng.standard_normal(grid.n_unknowns)
            assert np.allclose(lu.solve(rhs), np.linalg.solve(dense, rhs),
                               rtol=1e-10, atol=1e-13)

    def test_does_not_mutate_input(self):
        a = BandMatrix(1, 0, np.array([[4.0]]))
        before = a.bands.copy()
        factor_implicit_operator(a, 1.0, 0.1)
        assert np.array_equal(a.bands, before)


class TestDissipativity:
    def test_cases(self):
        assert problem_is_dissipative(consts(a=0.0, nu=-1.0))
        assert not problem_is_dissipative(consts())
        assert problem_is_dissipative(consts(a=0.0, nu=-2.0, lsq=3.0))
        assert not problem_is_dissipative(consts(a=0.0, nu=-1.0, lsq=2.0))


class TestEvaluatePredicates:
    def test_fully_implicit_additive_worked_case(self):
        c = consts(a=2.0, m=1.0)
        rpt = evaluate_predicates(c, "theta_maruyama", "additive",
                                  theta=1.0, dt=1.0, dx=0.1)
        assert rpt.predicates["eqpar"] is True
        assert rpt.alpha == pytest.approx(0.25, rel=1e-14)
        assert rpt.verdict == "contractive"
        assert rpt.valid is True
        assert rpt.lemma_bounds_hold is False
        assert rpt.dt_bound == pytest.approx(2.0 / 3.0, rel=1e-14)
        assert rpt.dt_bound_kind == "lower"

    def test_explicit_never_contracts_here(self):
        rpt = evaluate_predicates(consts(a=2.0, m=1.0), "theta_maruyama",
                                  "additive", theta=0.0, dt=1.0, dx=0.1)
        assert rpt.predicates["eqpar"] is False
        assert rpt.verdict == "not_contractive"
        assert rpt.dt_bound_kind == "upper" and rpt.dt_bound < 0.0

    def test_midpoint_coupled_scheme_is_skipped(self):
        rpt = evaluate_predicates(consts(a=2.0, m=1.0), "theta_maruyama",
                                  "additive", theta=0.5, dt=0.01, dx=0.1)
        assert rpt.verdict == "indeterminate"

    def test_midpoint_imex_is_decided(self):
        rpt = evaluate_predicates(consts(a=2.0, m=1.0), "theta_imex",
                                  "additive", theta=0.5, dt=0.01, dx=0.1)
        assert rpt.verdict in ("contractive", "not_contractive")

    def test_unknown_names_rejected(self):
        with pytest.raises(UnsupportedCombinationError):
            evaluate_predicates(consts(a=1.0), "leapfrog", "additive",
                                theta=1.0, dt=0.1, dx=0.1)
        with pytest.raises(UnsupportedCombinationError):
            evaluate_predicates(consts(a=1.0), "theta_maruyama", "jump",
                                theta=1.0, dt=0.1, dx=0.1)

    def test_verdict_tracks_alpha(self):
        rng = np.random.default_rng(11)
        schemes = [("theta_maruyama", "additive"), ("theta_maruyama", "multiplicative"),
                   ("theta_imex", "additive"), ("theta_imex", "multiplicative")]
        seen_contractive = 0
        for _ in range(400):
            c = consts(a=4.0 * rng.random(), m=2.0 * rng.random(),
                       lg=rng.random(), nu=rng.uniform(-3.0, 1.0),
                       lsq=rng.random())
            scheme, noise = schemes[rng.integers(len(schemes))]
            theta = float(rng.choice([0.0, 0.25, 0.75, 1.0]))
            dt = rng.uniform(1e-3, 3.0)
            rpt = evaluate_predicates(c, scheme, noise, theta, dt, dx=0.1)
            if rpt.alpha is None or not rpt.valid:
                assert rpt.verdict == "indeterminate"
                continue
            expected = "contractive" if rpt.alpha < 1.0 else "not_contractive"
            assert rpt.verdict == expected
            if rpt.verdict == "contractive":
                seen_contractive += 1
        assert seen_contractive > 0

    def test_stepsize_predicate_implies_contraction(self):
        rng = np.random.default_rng(13)
        hits = 0
        for _ in range(3000):
            c = consts(a=4.0 * rng.random(), m=2.0 * rng.random(),
                       lg=rng.random(), nu=rng.uniform(-3.0, 1.0),
                       lsq=rng.random())
            theta = float(rng.choice([0.75, 0.9, 1.0]))
            dt = rng.uniform(0.1, 5.0)
            for scheme, noise, tag in (("theta_maruyama", "additive", "eqpar"),
                                       ("theta_maruyama", "multiplicative", "eqpar2multheta"),
                                       ("theta_imex", "multiplicative", "eqpar2")):
                rpt = evaluate_predicates(c, scheme, noise, theta, dt, dx=0.1)
                if rpt.predicates[tag] and rpt.alpha is not None:
                    assert rpt.alpha < 1.0, (scheme, noise, theta, dt)
                    hits += 1
        assert hits > 0

    def test_imex_spatial_bound(self):
        rpt = evaluate_predicates(consts(a=8.0, m=2.0), "theta_imex",
                                  "additive", theta=1.0, dt=0.1, dx=0.5, p=2)
        assert rpt.dx_bound == pytest.approx(1.0, rel=1e-14)
        assert rpt.dt_bound is None

    def test_json_dict_is_flat(self):
        rpt = evaluate_predicates(consts(a=2.0, m=1.0), "theta_maruyama",
                                  "additive", theta=1.0, dt=1.0, dx=0.1,
                                  n_steps=3)
        d = rpt.to_json_dict()
        assert d["eqpar"] is True
        assert "predicates" not in d
        assert d["alpha_n_steps"] == pytest.approx(0.25**3, rel=1e-14)
        assert d["verdict"] == "contractive"
        for key in ("scheme", "noise", "theta", "dt", "dx", "alpha", "gamma",
                    "dt_bound", "dt_bound_kind", "dx_bound", "valid",
                    "lemma_bounds_hold", "condcontr"):
            assert key in d

    def test_gamma_reported_only_for_coupled_scheme(self):
        a = evaluate_predicates(consts(a=1.0, nu=-2.0), "theta_maruyama",
                                "additive", theta=1.0, dt=0.1, dx=0.1)
        b = evaluate_predicates(consts(a=1.0, nu=-2.0), "theta_imex",
                                "additive", theta=1.0, dt=0.1, dx=0.1)
        assert a.gamma is not None
        assert b.gamma is None


GRID = build_grid(0.0, 1.0, 16)


def linear_reaction_problem(noise):
    op = assemble_neg_laplacian(GRID)
    return make_custom("linear-reaction", GRID, op,
                       lambda x: x.copy(),
                       lambda x: DiagonalJacobian(np.ones(x.size)),
                       noise)


class TestJacobianBoundEstimation:
    def test_linear_reaction_is_exact(self):
        p = linear_reaction_problem(NoiseKind.additive(0.05))
        cfg = SchemeConfig(theta=1.0, dt=0.01, n_steps=30, seed=0)
        x0 = np.sin(np.pi * GRID.normalized_unknown_nodes())
        for variant in (VARIANT_NORM, VARIANT_NORM_SQUARED):
            est = estimate_jacobian_bound(p, cfg, x0, n_paths=8, variant=variant)
            assert est.value == 1.0
            assert est.std_error == 0.0
            assert est.blowup_fraction == 0.0
            assert est.reliable
            assert est.variant == variant

    def test_zero_reaction_gives_zero(self):
        op = assemble_neg_laplacian(GRID)
        p = make_custom("bare", GRID, op, lambda x: np.zeros_like(x),
                        lambda x: DiagonalJacobian(np.zeros(x.size)),
                        NoiseKind.additive(0.1))
        cfg = SchemeConfig(theta=1.0, dt=0.01, n_steps=10, seed=0)
        est = estimate_jacobian_bound(p, cfg, np.ones(p.state_dim), n_paths=4)
        assert est.value == 0.0

    def test_value_respects_sampled_radius(self):
        p = make_ginzburg_landau(GRID, NoiseKind.additive(0.1))
        cfg = SchemeConfig(theta=1.0, dt=0.005, n_steps=100, seed=1)
        x0 = np.sin(np.pi * GRID.normalized_unknown_nodes())
        est = estimate_jacobian_bound(p, cfg, x0, n_paths=12,
                                      variant=VARIANT_NORM_SQUARED)
        r = est.sample_radius
        cap = max(1.0, 3.0 * r * r - 1.0) ** 2
        assert 0.0 < est.value <= cap
        assert est.argmax_step >= 0

    def test_blown_paths_mark_estimate_unreliable(self):
        p = make_ginzburg_landau(GRID, NoiseKind.mult_linear())
        cfg = SchemeConfig(theta=0.0, dt=0.5, n_steps=40, seed=0)
        x0 = np.sin(np.pi * GRID.normalized_unknown_nodes())
        est = estimate_jacobian_bound(p, cfg, x0, n_paths=6)
        assert est.blowup_fraction > 0.5
        assert not est.reliable

    def test_input_validation(self):
        p = linear_reaction_problem(NoiseKind.additive(0.0))
        cfg = SchemeConfig(theta=1.0, dt=0.01, n_steps=5, seed=0)
        with pytest.raises(ValueError):
            estimate_jacobian_bound(p, cfg, np.ones(p.state_dim), n_paths=0)
        with pytest.raises(ValueError):
            estimate_jacobian_bound(p, cfg, np.ones(p.state_dim), n_paths=2,
                                    variant="median")


class TestDeriveConstants:
    X0 = np.sin(np.pi * GRID.normalized_unknown_nodes())
    CFG = SchemeConfig(theta=1.0, dt=0.01, n_steps=40, seed=2)

    def test_additive_noise_has_no_lipschitz_term(self):
        p = make_ginzburg_landau(GRID, NoiseKind.additive(0.3))
        c, est = derive_constants(p, self.CFG, self.X0, n_paths=6)
        assert c.diffusion_lipschitz == 0.0
        assert c.diffusion_lipschitz_sq == 0.0
        assert c.reaction_one_sided == 1.0        # closed form, not sampled
        assert est.one_sided_sample is None
        assert c.operator_norm == pytest.approx(p.operator_norm_exact, rel=1e-14)
        assert c.jacobian_bound == est.value

    def test_linear_noise_uses_its_scale(self):
        p = make_ginzburg_landau(GRID, NoiseKind.mult_linear())
        c, _ = derive_constants(p, self.CFG, self.X0, n_paths=6)
        assert c.diffusion_lipschitz == p.noise_scale == 1.0
        assert c.diffusion_lipschitz_sq == 1.0

    def test_quadratic_noise_uses_local_constant(self):
        p = make_ginzburg_landau(GRID, NoiseKind.mult_quadratic())
        c, est = derive_constants(p, self.CFG, self.X0, n_paths=6)
        assert c.diffusion_lipschitz == pytest.approx(
            2.0 * est.sample_radius * p.noise_scale, rel=1e-14)

    def test_custom_noise_rejected(self):
        p = linear_reaction_problem(NoiseKind.custom(lambda x: np.tanh(x), "tanh"))
        with pytest.raises(UnsupportedCombinationError):
            derive_constants(p, self.CFG, self.X0, n_paths=4)

    def test_one_sided_sampled_when_no_closed_form(self):
        grid = build_grid(0.0, 1.0, 12)
        p = make_cahn_hilliard(grid, NoiseKind.additive(0.05))
        x0 = 0.5 * np.sin(np.pi * grid.normalized_unknown_nodes())
        cfg = SchemeConfig(theta=1.0, dt=1e-5, n_steps=20, seed=3)
        c, est = derive_constants(p, cfg, x0, n_paths=4)
        assert p.one_sided_exact is None
        assert est.one_sided_sample is not None
        assert c.reaction_one_sided == est.one_sided_sample
