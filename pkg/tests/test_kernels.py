"""Parity between the compiled kernels and the pure NumPy reference."""
import numpy as np
import pytest

from rdsde import _kernels
from rdsde._kernels import SingularMatrixError, _pyref
from rdsde.grid import build_grid
from rdsde.integrators import SchemeConfig, simulate_pair
from rdsde.problems import (DibParams, NoiseKind, make_cahn_hilliard,
                            make_dib, make_ginzburg_landau,
                            make_uncoupled_system)
from conftest import random_spd_bands

pytestmark = pytest.mark.skipif(not _kernels.compiled_available(),
                                reason="compiled kernels were not built")

from rdsde._kernels import _core  # noqa: E402  (guarded by the skip above)


@pytest.fixture(autouse=True)
def restore_backend():
    yield
    _kernels.set_backend("auto")


class TestBandPrimitiveParity:
    def test_matvec_bitwise(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            k = int(rng.integers(0, min(4, n)))
            bands = rng.standard_normal((2 * k + 1, n))
            x = rng.standard_normal(n)
            assert np.array_equal(_core.band_matvec(bands, k, x),
                                  _pyref.band_matvec(bands, k, x))

    def test_lu_factor_and_solve_bitwise(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            k = int(rng.integers(1, min(4, n)))
            bands = random_spd_bands(rng, n, k)
            b = rng.standard_normal(n)
            ab_c, piv_c = _core.band_lu_factor(bands, k, None)
            ab_p, piv_p = _pyref.band_lu_factor(bands, k, None)
            assert np.array_equal(ab_c, ab_p)
            assert np.array_equal(piv_c, piv_p)
            assert np.array_equal(_core.band_lu_solve(ab_c, piv_c, k, b),
                                  _pyref.band_lu_solve(ab_p, piv_p, k, b))

    def test_pivoting_branch_parity(self):
        # leading entry small enough to force row exchanges
        bands = np.array([[0.0, 2.0], [1e-300, 3.0], [4.0, 0.0]])
        ab_c, piv_c = _core.band_lu_factor(bands, 1, None)
        ab_p, piv_p = _pyref.band_lu_factor(bands, 1, None)
        assert np.array_equal(ab_c, ab_p)
        assert np.array_equal(piv_c, piv_p)

    def test_singular_matrix_error_is_shared(self):
        assert _core.SingularMatrixError is SingularMatrixError
        bands = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])  # equal rows
        with pytest.raises(SingularMatrixError):
            _core.band_lu_factor(bands, 1, None)
        with pytest.raises(SingularMatrixError):
            _pyref.band_lu_factor(bands, 1, None)


DIB_PARAMS = DibParams(d1=1.0, d2=2.0, rho=1.5, a1=1.0, a2=0.8, b=1.2,
                       alpha=0.4, c=1.1, d=0.9, gamma=0.2, k2=0.3, k3=0.25)


def parity_cases():
    g = build_grid(0.0, 1.0, 12)
    gl = make_ginzburg_landau(g, NoiseKind.mult_linear())
    ch = make_cahn_hilliard(g, NoiseKind.additive(0.05))
    un = make_uncoupled_system(g, NoiseKind.mult_quadratic())
    dib = make_dib(g, DIB_PARAMS, NoiseKind.additive(0.02))
    cases = []
    for theta in (0.0, 0.5, 1.0):
        cases.append((gl, SchemeConfig(theta=theta, dt=1e-4, n_steps=30, seed=8)))
        cases.append((gl, SchemeConfig(theta=theta, dt=1e-4, n_steps=30,
                                       scheme="theta_imex", seed=8)))
    cases.append((ch, SchemeConfig(theta=1.0, dt=1e-6, n_steps=25, seed=9)))
    cases.append((un, SchemeConfig(theta=1.0, dt=1e-4, n_steps=25, seed=10)))
    cases.append((dib, SchemeConfig(theta=1.0, dt=1e-4, n_steps=25,
                                    scheme="theta_imex", seed=11)))
    return cases


def run_both(problem, cfg, u0, y0):
    out = {}
    for backend in ("python", "compiled"):
        _kernels.set_backend(backend)
        out[backend] = simulate_pair(problem, cfg, u0, y0, record_states=True)
    _kernels.set_backend("auto")
    return out["python"], out["compiled"]


class TestFullDriverParity:
    def test_trajectories_agree(self):
        for problem, cfg in parity_cases():
            u0 = np.tile(0.4 * np.sin(
                np.pi * problem.grid.normalized_unknown_nodes()),
                problem.n_components)
            y0 = -0.5 * u0
            py, cy = run_both(problem, cfg, u0, y0)
            assert py.blowup_step == cy.blowup_step, (problem.name, cfg.scheme)
            assert np.array_equal(py.newton_iters, cy.newton_iters)
            assert np.allclose(py.z_sqnorms, cy.z_sqnorms,
                               rtol=1e-9, atol=1e-14), (problem.name, cfg.scheme)
            assert np.allclose(py.u_states, cy.u_states, rtol=1e-9, atol=1e-12)

    def test_blowup_step_matches(self):
        g = build_grid(0.0, 1.0, 16)
        p = make_ginzburg_landau(g, NoiseKind.mult_linear())
        cfg = SchemeConfig(theta=0.0, dt=0.5, n_steps=30, seed=0)
        u0 = np.sin(np.pi * g.normalized_unknown_nodes())
        py, cy = run_both(p, cfg, u0, -u0)
        assert py.blowup_step is not None
        assert py.blowup_step == cy.blowup_step


class TestDispatchRules:
    def test_fused_coverage(self):
        assert _kernels.fused_driver_available(
            _kernels.SCHEME_MARUYAMA, _kernels.REACTION_CUBIC,
            _kernels.DIFFUSION_LINEAR)
        assert _kernels.fused_driver_available(
            _kernels.SCHEME_IMEX, _kernels.REACTION_DIB,
            _kernels.DIFFUSION_CONST)
        # the coupled Newton matrix for this reaction is not narrow-banded
        assert not _kernels.fused_driver_available(
            _kernels.SCHEME_MARUYAMA, _kernels.REACTION_DIB,
            _kernels.DIFFUSION_CONST)
        assert not _kernels.fused_driver_available(
            _kernels.SCHEME_MARUYAMA, _kernels.REACTION_CUSTOM,
            _kernels.DIFFUSION_CONST)
        assert not _kernels.fused_driver_available(
            _kernels.SCHEME_IMEX, _kernels.REACTION_CUBIC,
            _kernels.DIFFUSION_CUSTOM)

    def test_python_backend_never_claims_fused(self):
        _kernels.set_backend("python")
        assert _kernels.backend_name() == "python"
        assert not _kernels.fused_driver_available(
            _kernels.SCHEME_MARUYAMA, _kernels.REACTION_CUBIC,
            _kernels.DIFFUSION_LINEAR)

    def test_backend_switching(self):
        _kernels.set_backend("compiled")
        assert _kernels.backend_name() == "compiled"
        _kernels.set_backend("auto")
        assert _kernels.backend_name() == "compiled"
        with pytest.raises(ValueError):
            _kernels.set_backend("fortran")
