"""Shared oracles and builders for the test suite.

Everything here is deliberately independent of the library's own evaluation
paths: quadrature oracles integrate the cell density directly, derivative
oracles use mpmath, and simulation oracles use long-run empirical moments.
"""

import numpy as np
from scipy.integrate import quad

from secar import (CarStructure, CountPanel, CovariateDesign, ModelParams,
                   SpatialGraph, build_torus_lattice, simulate)


def cell_g(y, z, c, tau2, a=0.0):
    """Scalar negative log integrand of a single cell."""
    lam = np.exp(y) + c
    data = c + np.exp(y) - (z * np.log(lam) if z > 0 else 0.0)
    return (y - a) ** 2 / (2.0 * tau2) + data


def cell_data_logdensity(y, z, c):
    """Log Poisson kernel of one cell as a function of the latent value."""
    lam = np.exp(y) + c
    return -c - np.exp(y) + (z * np.log(lam) if z > 0 else 0.0)


def exact_single_cell_logmarginal(z, c, tau2, a=0.0):
    """Adaptive-quadrature value of 0.5*log(1/tau2) - 0.5*log(2pi)
    + log integral exp(-g); the quantity la1/xla approximate."""
    ys = np.linspace(a - 15.0, a + 15.0, 2001)
    gs = np.array([cell_g(y, z, c, tau2, a) for y in ys])
    y0 = ys[np.argmin(gs)]
    g0 = float(gs.min())
    val, _ = quad(lambda s: np.exp(-(cell_g(y0 + s, z, c, tau2, a) - g0)),
                  -30.0, 30.0, limit=500)
    return 0.5 * np.log(1.0 / tau2) - 0.5 * np.log(2.0 * np.pi) + np.log(val) - g0


def quadrature_posterior_mean(z, c, tau2, a=0.0):
    """Posterior mean of the latent value of a single cell."""
    ys = np.linspace(a - 15.0, a + 15.0, 2001)
    gs = np.array([cell_g(y, z, c, tau2, a) for y in ys])
    y0 = ys[np.argmin(gs)]
    g0 = float(gs.min())
    num, _ = quad(lambda s: (y0 + s) * np.exp(-(cell_g(y0 + s, z, c, tau2, a) - g0)),
                  -30.0, 30.0, limit=500)
    den, _ = quad(lambda s: np.exp(-(cell_g(y0 + s, z, c, tau2, a) - g0)),
                  -30.0, 30.0, limit=500)
    return num / den


def single_node_car():
    return CarStructure.from_graph(SpatialGraph(np.zeros((1, 1))))


def single_cell_problem(z, z_prev, eta, tau2, a=0.0):
    """One location, one week: the 1-D instance used by quadrature oracles."""
    car = single_node_car()
    panel = CountPanel(np.array([[z]]), np.array([z_prev]))
    design = CovariateDesign(np.ones((1, 1, 1)), names=["intercept"])
    params = ModelParams(eta=eta, zeta=0.0, tau2=tau2, beta=np.array([a]))
    return panel, design, car, params


def torus_problem(rows, cols, T, params, seed, burn_in=50):
    car = CarStructure.from_graph(build_torus_lattice(rows, cols))
    design = CovariateDesign.intercept_only(T, car.n_d)
    panel, latent = simulate(car, params, design, T, seed=seed, burn_in=burn_in)
    return car, design, panel, latent


def constant_panel(n_d, T, value, history=None):
    counts = np.full((T, n_d), value, dtype=np.int64)
    initial = np.full(n_d, value if history is None else history, dtype=np.int64)
    return CountPanel(counts, initial)
