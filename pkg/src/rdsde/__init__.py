"""rdsde: 1D stochastic reaction-diffusion solvers and dissipativity analysis.

Finite-difference semi-discretizations of dissipative stochastic PDEs on an
interval, theta-Maruyama and theta-IMEX time stepping of coupled trajectory
pairs, and the mean-square contractivity coefficients and step-size
conditions that predict whether the pair distance contracts.
"""
__version__ = "0.1.0"

from . import analysis, cli, experiments, grid, integrators, problems  # noqa: F401
