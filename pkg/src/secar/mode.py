"""Gaussian approximation to pi(Y | Z, theta): Taylor coefficients, latent
mode via damped per-block Newton solves, and the first-order Laplace
log-posterior.

The joint density factors over time blocks, so the mode is found block by
block with dense n_d x n_d Cholesky factorizations that are retained for the
Hessian log-determinant and for the downstream correction terms.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import kernels
from .graph import car_precision_block, logdet_precision
from .model import linear_predictor

DEFAULT_TOL = 1e-8
MAX_ITER = 100
_MIN_STEP = 1e-10
_STEP_CAP = 4.0  # per-cell clamp on one Newton update (log-intensity scale)


class ModeError(RuntimeError):
    """Raised when the latent mode iteration cannot make progress."""


def taylor_coeffs(mu, z, z_prev, eta):
    """First- and second-order expansion coefficients (f, k) of the data
    log-density about mu. Accepts scalars or arrays."""
    mu_a = np.atleast_1d(np.asarray(mu, dtype=np.float64)).ravel()
    z_a = np.broadcast_to(np.asarray(z, dtype=np.float64), mu_a.shape).ravel().copy()
    zp_a = np.broadcast_to(np.asarray(z_prev, dtype=np.float64), mu_a.shape).ravel().copy()
    f, k = kernels.fk_values(mu_a, z_a, eta * zp_a)
    if np.isscalar(mu) or np.asarray(mu).ndim == 0:
        return float(f[0]), float(k[0])
    return f.reshape(np.shape(mu)), k.reshape(np.shape(mu))


@dataclass
class ModeResult:
    """Converged Gaussian approximation for all time blocks.

    ``chol_blocks[t]`` is the lower Cholesky factor of the block Hessian
    Q + diag(k_t) evaluated at the mode; ``W`` holds the k(mu*) diagonal.
    """

    mu_star: np.ndarray
    W: np.ndarray
    chol_blocks: np.ndarray
    logdet_hessian: float
    g_at_mode: float
    converged: bool
    iterations: int
    grad_max: float
    alpha: np.ndarray
    block_iterations: np.ndarray = None
    failed_blocks: tuple = ()

    @property
    def hessian_blocks(self):
        return np.einsum("tij,tkj->tik", self.chol_blocks, self.chol_blocks)

    @property
    def T(self):
        return self.mu_star.shape[0]

    @property
    def n_d(self):
        return self.mu_star.shape[1]


def _block_g(mu, alpha_t, q, z, c):
    d = mu - alpha_t
    return 0.5 * float(d @ (q @ d)) + kernels.data_nll(mu, z, c)


def _block_mode(q, q_alpha, alpha_t, z, c, start, tol, max_iter):
    """Damped Newton iteration for one time block.

    Unridged, the update solves (Q + diag k(mu)) mu_new = f(mu) + Q alpha;
    where the Hessian is indefinite a Levenberg ridge is added and the step
    is taken against the gradient form. Candidates are step-halved until g
    decreases; per-cell clamping keeps one extreme cell from stalling the
    block.
    """
    n = alpha_t.shape[0]
    mu = start.copy()
    g_cur = _block_g(mu, alpha_t, q, z, c)
    if not np.isfinite(g_cur):
        mu = alpha_t.copy()
        g_cur = _block_g(mu, alpha_t, q, z, c)

    ridge_base = 1e-8 * (1.0 + float(np.max(q.diagonal())))
    for it in range(1, max_iter + 1):
        _, k = kernels.fk_values(mu, z, c)
        grad = q @ mu - q_alpha + kernels.data_nll_grad(mu, z, c)
        h = q.toarray()
        h[np.diag_indices(n)] += k
        ridge = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(h)
                break
            except np.linalg.LinAlgError:
                ridge = ridge_base if ridge == 0.0 else ridge * 10.0
                h[np.diag_indices(n)] += ridge
                if ridge > 1e10 * ridge_base:
                    return mu, g_cur, it, False
        # clamp per cell so one extreme cell cannot stall the whole block
        step = np.clip(sla.cho_solve((chol, True), -grad), -_STEP_CAP, _STEP_CAP)

        scale = 1.0
        while True:
            cand = mu + scale * step
            g_new = _block_g(cand, alpha_t, q, z, c)
            if np.isfinite(g_new) and g_new <= g_cur + 1e-12 * (1.0 + abs(g_cur)):
                break
            scale *= 0.5
            if scale < _MIN_STEP:
                cand = mu
                g_new = g_cur
                break
        delta = float(np.max(np.abs(cand - mu)))
        mu, g_cur = cand, g_new
        # converged only if the step came from the true (unridged) Hessian
        if delta < tol and ridge == 0.0:
            return mu, g_cur, it, True
    return mu, g_cur, max_iter, False


def default_start(panel, alpha):
    """log(Z + 0.5) softened halfway toward the linear predictor."""
    if panel.T == 0:
        return np.zeros((0, panel.n_d))
    return 0.5 * (np.log(panel.counts + 0.5) + alpha)


def find_mode(panel, params, alpha, car, start=None, tol=DEFAULT_TOL, max_iter=MAX_ITER):
    """Maximize the Gaussian approximation block by block.

    Returns a :class:`ModeResult` whose Cholesky factors are recomputed at the
    final iterate of every block, so the log-determinant and the inverse
    blocks refer exactly to the converged Hessian.
    """
    params.validate(car)
    T, n = panel.T, panel.n_d
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (T, n):
        raise ValueError(f"alpha shape {alpha.shape} does not match panel ({T}, {n})")
    q = car_precision_block(car, params.zeta, params.tau2)
    prev = panel.prev_counts()
    if start is None:
        start = default_start(panel, alpha)
    start = np.asarray(start, dtype=np.float64)

    mu_star = np.empty((T, n))
    w = np.empty((T, n))
    chols = np.empty((T, n, n))
    logdet = 0.0
    g_total = 0.0
    grad_max = 0.0
    block_iters = np.zeros(T, dtype=np.int64)
    failed = []
    all_ok = True
    for t in range(T):
        z = panel.counts[t].astype(np.float64)
        c = params.eta * prev[t]
        q_alpha = q @ alpha[t]
        mu, g_block, it, ok = _block_mode(q, q_alpha, alpha[t], z, c, start[t], tol, max_iter)
        block_iters[t] = it
        _, k = kernels.fk_values(mu, z, c)
        h = q.toarray()
        h[np.diag_indices(n)] += k
        ridge = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(h)
                break
            except np.linalg.LinAlgError:
                # final iterate is not a proper local minimum; keep a damped
                # factor so downstream fields stay defined, but flag the block
                ok = False
                ridge = max(2.0 * ridge, 1e-6 * (1.0 + float(np.abs(k).max())))
                h[np.diag_indices(n)] += ridge
        if not ok:
            failed.append(t)
        all_ok &= ok
        grad = q @ (mu - alpha[t]) + kernels.data_nll_grad(mu, z, c)
        grad_max = max(grad_max, float(np.max(np.abs(grad))) if n else 0.0)
        mu_star[t] = mu
        w[t] = k
        chols[t] = chol
        logdet += 2.0 * float(np.sum(np.log(np.diag(chol))))
        g_total += g_block

    return ModeResult(mu_star=mu_star, W=w, chol_blocks=chols, logdet_hessian=logdet,
                      g_at_mode=g_total, converged=all_ok,
                      iterations=int(block_iters.max()) if T else 0,
                      grad_max=grad_max, alpha=alpha, block_iterations=block_iters,
                      failed_blocks=tuple(failed))


def la1_from_mode(mode, params, car, log_prior=0.0):
    """Assemble the first-order Laplace log-posterior from a converged mode."""
    ld_q = logdet_precision(car, params.zeta, params.tau2, mode.T) if mode.T else 0.0
    return 0.5 * ld_q - mode.g_at_mode - 0.5 * mode.logdet_hessian + log_prior


def la1_log_posterior(panel, params, design, car, priors=None, start=None, tol=DEFAULT_TOL):
    """First-order Laplace approximation of the log-posterior at theta.

    ``priors=None`` drops the prior terms, giving the marginal-likelihood view.
    """
    alpha = linear_predictor(design, params.beta)
    mode = find_mode(panel, params, alpha, car, start=start, tol=tol)
    if not mode.converged:
        raise ModeError("latent mode iteration did not converge")
    lp = priors.log_prior(params, car) if priors is not None else 0.0
    return la1_from_mode(mode, params, car, lp)
