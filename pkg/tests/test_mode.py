"""Mode finder: Taylor coefficients, per-block Newton solves, first-order
Laplace assembly."""

import time

import numpy as np
import pytest
import scipy.linalg as sla

from helpers import (cell_data_logdensity, exact_single_cell_logmarginal,
                     single_cell_problem, single_node_car, torus_problem)
from secar import (CarStructure, CountPanel, CovariateDesign, ModelParams,
                   build_torus_lattice, find_mode, g_gradient, la1_log_posterior,
                   linear_predictor, taylor_coeffs)
from secar.mode import ModeError, la1_from_mode


class TestTaylorCoeffs:
    def test_pure_poisson_closed_form(self):
        for mu in (-1.0, 0.0, 2.3):
            for z in (0, 1, 7):
                f, k = taylor_coeffs(mu, z, 0, 0.5)
                assert abs(k - np.exp(mu)) < 1e-14
                assert abs(f - (z - np.exp(mu) + mu * np.exp(mu))) < 1e-12

    def test_zero_count_any_history(self):
        for z_prev in (0, 3, 50):
            _, k = taylor_coeffs(0.7, 0, z_prev, 0.6)
            assert abs(k - np.exp(0.7)) < 1e-14

    def test_k_matches_numeric_second_derivative(self):
        import mpmath as mp
        mu, z, z_prev, eta = 0.0, 3, 2, 0.5
        c = eta * z_prev
        num = -float(mp.diff(lambda y: -c - mp.e ** y + z * mp.log(mp.e ** y + c),
                             mu, 2))
        _, k = taylor_coeffs(mu, z, z_prev, eta)
        assert abs(k - num) < 1e-8 * (1 + abs(num))

    def test_array_broadcasting(self):
        mu = np.array([[0.0, 1.0], [-1.0, 0.5]])
        f, k = taylor_coeffs(mu, 2, 1, 0.3)
        assert f.shape == k.shape == (2, 2)

    def test_large_mu_stays_finite(self):
        f, k = taylor_coeffs(35.0, 5, 3, 0.5)
        assert np.isfinite(f) and np.isfinite(k)


class TestFindMode:
    def test_scalar_root_against_bisection(self):
        car = single_node_car()
        panel = CountPanel(np.array([[0]]), np.array([0]))
        design = CovariateDesign.intercept_only(1, 1)
        params = ModelParams(eta=0.0, zeta=0.0, tau2=1.0, beta=np.array([0.0]))
        mode = find_mode(panel, params, linear_predictor(design, params.beta), car)
        # independent oracle: bisection on the stationarity condition y + e^y = 0
        lo, hi = -2.0, 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if mid + np.exp(mid) < 0:
                lo = mid
            else:
                hi = mid
        assert mode.converged
        assert abs(mode.mu_star[0, 0] - 0.5 * (lo + hi)) < 1e-9
        assert abs(mode.mu_star[0, 0] - (-0.5671432904097838)) < 1e-9

    def test_large_intensity_mode_near_alpha(self):
        car = CarStructure.from_graph(build_torus_lattice(4, 4))
        alpha0, tau2 = 2.0, 0.05
        z = int(round(np.exp(alpha0)))
        panel = CountPanel(np.full((3, 16), z), np.zeros(16, dtype=int))
        design = CovariateDesign.intercept_only(3, 16)
        params = ModelParams(eta=0.0, zeta=0.0, tau2=tau2, beta=np.array([alpha0]))
        mode = find_mode(panel, params, linear_predictor(design, params.beta), car)
        assert mode.converged
        assert np.max(np.abs(mode.mu_star - alpha0)) < 2.0 * tau2

    def test_fast_convergence_from_truth(self):
        truth = ModelParams(eta=0.3, zeta=0.2, tau2=0.5, beta=np.array([0.0]))
        car, design, panel, latent = torus_problem(10, 10, 100, truth, seed=5)
        mode = find_mode(panel, truth, linear_predictor(design, truth.beta), car,
                         start=latent)
        assert mode.converged
        assert mode.iterations <= 10

    def test_gradient_below_tolerance_at_mode(self, small_problem):
        mode = find_mode(small_problem["panel"], small_problem["truth"],
                         np.full((40, 25), 0.2), small_problem["car"])
        assert mode.converged
        assert mode.grad_max < 1e-6
        grad = g_gradient(mode.mu_star, small_problem["panel"], small_problem["truth"],
                          mode.alpha, small_problem["car"])
        assert np.max(np.abs(grad)) < 1e-6

    def test_hessian_blocks_positive_definite(self, small_problem):
        mode = find_mode(small_problem["panel"], small_problem["truth"],
                         np.full((40, 25), 0.2), small_problem["car"])
        for t in (0, 17, 39):
            np.linalg.cholesky(mode.hessian_blocks[t])

    def test_logdet_matches_dense_full_hessian(self):
        truth = ModelParams(eta=0.2, zeta=0.15, tau2=0.6, beta=np.array([0.1]))
        car, design, panel, _ = torus_problem(4, 4, 25, truth, seed=9)  # n*T = 400
        mode = find_mode(panel, truth, linear_predictor(design, truth.beta), car)
        dense = sla.block_diag(*mode.hessian_blocks)
        _, expected = np.linalg.slogdet(dense)
        assert abs(mode.logdet_hessian - expected) < 1e-8 * max(1.0, abs(expected))

    def test_nonconvergence_reported_not_raised(self, small_problem):
        mode = find_mode(small_problem["panel"], small_problem["truth"],
                         np.full((40, 25), 0.2), small_problem["car"],
                         start=np.full((40, 25), 30.0), max_iter=2)
        assert not mode.converged

    def test_convergence_from_extreme_starts_on_zero_counts(self, torus3):
        # all-zero counts make g convex: the solver must converge from anywhere
        panel = CountPanel(np.zeros((2, 9), dtype=int), np.zeros(9, dtype=int))
        design = CovariateDesign.intercept_only(2, 9)
        params = ModelParams(eta=0.0, zeta=0.2, tau2=1.0, beta=np.array([0.0]))
        alpha = linear_predictor(design, params.beta)
        for start_val in (-25.0, 25.0):
            mode = find_mode(panel, params, alpha, torus3,
                             start=np.full((2, 9), start_val))
            assert mode.converged
            assert mode.grad_max < 1e-6

    def test_extreme_self_excitation_cell_regression(self):
        # non-convex single cell that once froze the damped iteration
        car = single_node_car()
        panel = CountPanel(np.array([[321]]), np.array([481]))
        design = CovariateDesign.intercept_only(1, 1)
        params = ModelParams(eta=0.2, zeta=0.0, tau2=0.5, beta=np.array([2.285]))
        mode = find_mode(panel, params, linear_predictor(design, params.beta), car)
        assert mode.converged
        assert mode.grad_max < 1e-6
        _, k = taylor_coeffs(float(mode.mu_star[0, 0]), 321, 481, 0.2)
        assert k + 1.0 / 0.5 > 0.0


class TestLa1:
    def test_exact_for_gaussian_integrand(self):
        # quadratic g: Laplace is exact; cross-check the assembly against
        # a closed-form Gaussian integral
        prec_prior, prec_data, m = 2.0, 3.0, 0.7
        h = prec_prior + prec_data
        mu_hat = prec_data * m / h
        g_hat = 0.5 * prec_prior * mu_hat ** 2 + 0.5 * prec_data * (mu_hat - m) ** 2
        la1 = 0.5 * np.log(prec_prior) - g_hat - 0.5 * np.log(h)
        from scipy.integrate import quad
        val, _ = quad(lambda y: np.exp(-(0.5 * prec_prior * y ** 2
                                         + 0.5 * prec_data * (y - m) ** 2)), -30, 30)
        exact = 0.5 * np.log(prec_prior) - 0.5 * np.log(2 * np.pi) + np.log(val)
        assert abs(la1 - exact) < 1e-10

    def test_single_cell_against_quadrature(self):
        panel, design, car, params = single_cell_problem(1, 0, 0.0, 1.0)
        exact = exact_single_cell_logmarginal(1, 0.0, 1.0)
        la1 = la1_log_posterior(panel, params, design, car)
        # measured truncation error of LA(1) here is ~+4.9e-3
        assert abs(la1 - exact) < 8e-3
        assert la1 > exact  # LA(1) overshoots on this instance

    def test_permutation_invariance(self, small_problem):
        car, panel = small_problem["car"], small_problem["panel"]
        truth, design = small_problem["truth"], small_problem["design"]
        base = la1_log_posterior(panel, truth, design, car)

        rng = np.random.default_rng(123)
        perm = rng.permutation(panel.n_d)
        a = car.graph.adjacency.toarray()[np.ix_(perm, perm)]
        car_p = CarStructure.from_graph(
            type(car.graph)(a))
        panel_p = CountPanel(panel.counts[:, perm], panel.initial_counts[perm])
        relabeled = la1_log_posterior(panel_p, truth, design, car_p)
        assert abs(base - relabeled) < 1e-9 * max(1.0, abs(base))

    def test_cost_scales_gently_with_T(self):
        truth = ModelParams(eta=0.2, zeta=0.1, tau2=0.5, beta=np.array([0.0]))
        car, design1, panel1, _ = torus_problem(6, 6, 30, truth, seed=31)
        _, design2, panel2, _ = torus_problem(6, 6, 60, truth, seed=31)

        def best_time(panel, design):
            best = np.inf
            for _ in range(3):
                t0 = time.perf_counter()
                la1_log_posterior(panel, truth, design, car)
                best = min(best, time.perf_counter() - t0)
            return best

        t1 = best_time(panel1, design1)
        t2 = best_time(panel2, design2)
        assert t2 < 3.0 * t1 + 0.05

    def test_priors_added_when_given(self, small_problem):
        from secar import PriorSpec
        car, panel = small_problem["car"], small_problem["panel"]
        truth, design = small_problem["truth"], small_problem["design"]
        priors = PriorSpec()
        without = la1_log_posterior(panel, truth, design, car)
        with_p = la1_log_posterior(panel, truth, design, car, priors=priors)
        assert abs((with_p - without) - priors.log_prior(truth, car)) < 1e-10
