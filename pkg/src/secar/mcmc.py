"""Fully Bayesian sampler over (theta, Y) for small-to-moderate instances.

Latent blocks get preconditioned Langevin (MALA) sweeps, transformed theta an
adaptive random walk with full proposal covariance learned during warm-up,
and a joint rescaling move on (tau2, Y - alpha) breaks the funnel between the
conditional variance and the latent field. The Gaussian log-density of Y uses
the precomputed adjacency spectrum, so no large determinant is ever formed;
theta proposals reuse cached quadratic forms s0 = ||Y-alpha||^2 and
s1 = (Y-alpha)' N (Y-alpha), giving O(1) Gaussian updates in (zeta, tau2).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph import car_precision_block, logdet_precision
from .inference import ParamTransform, default_start_params
from .mode import find_mode
from .model import linear_predictor

LOG_2PI = float(np.log(2.0 * np.pi))
DIVERGENCE_JUMP = 1e3
_TARGET_Y = 0.574
_TARGET_THETA = 0.3
_TARGET_SCALE = 0.44


def log_joint(params, Y, panel, design, car, priors):
    """Joint log-density of (theta, Y, Z) up to the count factorials.

    Assembled directly from the data likelihood, the Gaussian prior of the
    latent blocks (spectral log-determinant) and the parameter priors.
    Inadmissible theta gives -inf.
    """
    if not params.is_admissible(car):
        return -np.inf
    lp = priors.log_prior(params, car)
    if not np.isfinite(lp):
        return -np.inf
    if panel.T == 0:
        return lp
    Y = np.asarray(Y, dtype=np.float64)
    alpha = linear_predictor(design, params.beta)
    lam = np.exp(Y) + params.eta * panel.prev_counts()
    data = float(np.sum(panel.counts * np.log(lam) - lam))
    q = car_precision_block(car, params.zeta, params.tau2)
    d = Y - alpha
    quad = float(np.sum(d * (q @ d.T).T))
    n_total = panel.T * panel.n_d
    gauss = 0.5 * logdet_precision(car, params.zeta, params.tau2, panel.T) \
        - 0.5 * quad - 0.5 * n_total * LOG_2PI
    return data + gauss + lp


def rw_log_acceptance(lp_current, lp_proposal):
    """Log acceptance ratio of a symmetric random-walk proposal (unclipped)."""
    return lp_proposal - lp_current


@dataclass
class ChainDiagnostics:
    names: list
    rhat: dict
    ess: dict
    accept_y: float
    accept_theta: float
    accept_scale: float
    divergences: int

    def max_rhat(self):
        return max(self.rhat.values())


@dataclass
class ChainSamples:
    """Post-warm-up draws; theta is natural-scale (n_chains, n_kept, dim)."""

    names: list
    theta: np.ndarray
    phi: np.ndarray
    log_joint: np.ndarray

    @property
    def n_chains(self):
        return self.theta.shape[0]

    @property
    def n_kept(self):
        return self.theta.shape[1]

    def flat(self, name):
        k = self.names.index(name)
        return self.theta[:, :, k].ravel()


@dataclass
class _ChainState:
    """Current point plus caches; quad = (s0 - zeta*s1)/tau2."""

    phi: np.ndarray
    params: object
    Y: np.ndarray
    EY: np.ndarray
    alpha: np.ndarray
    s0: float
    s1: float
    data: float
    lp_theta: float  # prior + transform jacobian
    eps: float = 0.25
    theta_scale: float = 0.4
    rescale_step: float = 0.3
    translate_step: float = 0.3
    prop_chol: np.ndarray = None
    history: list = field(default_factory=list)


def _data_from_ey(EY, counts, c):
    lam = EY + c
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, counts * np.log(lam), 0.0) - lam
    return float(np.sum(terms))


def _quad(state):
    return (state.s0 - state.params.zeta * state.s1) / state.params.tau2


def _gauss_part(car, params, T, n_d, quad):
    if T == 0:
        return 0.0
    return 0.5 * logdet_precision(car, params.zeta, params.tau2, T) \
        - 0.5 * quad - 0.5 * T * n_d * LOG_2PI


def _total(state, car, panel):
    return state.data + _gauss_part(car, state.params, panel.T, panel.n_d,
                                    _quad(state)) + state.lp_theta


def _refresh_quadratics(state, adjacency):
    dev = state.Y - state.alpha
    state.s0 = float(np.sum(dev * dev))
    state.s1 = float(np.sum(dev * (adjacency @ dev.T).T)) if dev.size else 0.0


def run_chains(panel, design, car, priors, n_chains=3, n_iter=4000, seed=0,
               theta_start=None, thin=1, theta_updates=3):
    """Run ``n_chains`` independent chains of ``n_iter`` iterations each and
    discard the first half as warm-up (adaptation happens only there).

    One iteration is a latent MALA sweep followed by ``theta_updates``
    random-walk updates of theta plus the rescale and translate interweaving
    moves. Returns (ChainSamples, ChainDiagnostics). Deterministic under
    ``seed``.
    """
    if n_chains < 2:
        raise ValueError("need n_chains >= 2 for split-R-hat diagnostics")
    if n_iter < 4:
        raise ValueError("n_iter too small")
    tr = ParamTransform.for_problem(car, priors, design.p)
    base = theta_start or default_start_params(panel, design, car, priors)
    base.validate(car)
    phi0 = tr.to_phi(base)
    adjacency = car.graph.adjacency

    seeds = np.random.SeedSequence(seed).spawn(n_chains)
    warm = n_iter // 2
    kept = n_iter - warm
    d = tr.dim
    n_rows = (kept + thin - 1) // thin
    theta_out = np.empty((n_chains, n_rows, d))
    phi_out = np.empty_like(theta_out)
    lj_out = np.empty(theta_out.shape[:2])
    acc = {"y": [], "theta": [], "scale": []}
    divergences = 0

    for c_idx in range(n_chains):
        rng = np.random.default_rng(seeds[c_idx])
        state = _init_state(panel, design, car, priors, tr, phi0, rng, adjacency)
        precond = _preconditioner(panel, design, car, state.params)
        acc_y = acc_t = acc_s = 0.0
        n_y = n_t = n_s = 0
        keep_row = 0
        lj_prev = _total(state, car, panel)
        for it in range(n_iter):
            warmup = it < warm
            if warmup and panel.T and it == max(warm // 2, 1):
                precond = _preconditioner(panel, design, car, state.params)
            if panel.T:
                rate = _update_latent(state, panel, car, precond, rng)
                n_y += 1
                acc_y += rate
                _refresh_quadratics(state, adjacency)
                state.data = _data_from_ey(state.EY, panel.counts,
                                           state.params.eta * panel.prev_counts())
                if warmup:
                    state.eps *= float(np.exp(0.66 * (rate - _TARGET_Y) / np.sqrt(1.0 + it)))
                    state.eps = float(np.clip(state.eps, 1e-4, 5.0))
            for _ in range(theta_updates):
                ok = _update_theta(state, panel, design, car, priors, tr, rng, adjacency)
                n_t += 1
                acc_t += ok
                if warmup:
                    state.theta_scale *= float(
                        np.exp(0.66 * (ok - _TARGET_THETA) / np.sqrt(1.0 + it)))
                    state.theta_scale = float(np.clip(state.theta_scale, 1e-3, 20.0))
            if warmup:
                state.history.append(state.phi.copy())
                if (it + 1) % 100 == 0 and len(state.history) >= 200:
                    hist = np.array(state.history[-1500:])
                    cov = np.cov(hist.T) + 1e-9 * np.eye(d)
                    try:
                        state.prop_chol = np.linalg.cholesky(cov)
                    except np.linalg.LinAlgError:
                        pass
            if panel.T:
                ok_s = _update_rescale(state, panel, car, priors, tr, rng)
                n_s += 1
                acc_s += ok_s
                ok_b = _update_translate(state, panel, design, car, priors, tr, rng)
                if warmup:
                    state.rescale_step *= float(
                        np.exp(0.66 * (ok_s - _TARGET_SCALE) / np.sqrt(1.0 + it)))
                    state.rescale_step = float(np.clip(state.rescale_step, 1e-4, 5.0))
                    state.translate_step *= float(
                        np.exp(0.66 * (ok_b - _TARGET_SCALE) / np.sqrt(1.0 + it)))
                    state.translate_step = float(np.clip(state.translate_step, 1e-4, 5.0))
            lj = _total(state, car, panel)
            if abs(lj - lj_prev) > DIVERGENCE_JUMP:
                divergences += 1
            lj_prev = lj
            if not warmup and (it - warm) % thin == 0 and keep_row < n_rows:
                theta_out[c_idx, keep_row] = _natural_vector(state.params)
                phi_out[c_idx, keep_row] = state.phi
                lj_out[c_idx, keep_row] = lj
                keep_row += 1
        acc["y"].append(acc_y / max(n_y, 1))
        acc["theta"].append(acc_t / max(n_t, 1))
        acc["scale"].append(acc_s / max(n_s, 1))

    samples = ChainSamples(names=tr.names, theta=theta_out, phi=phi_out, log_joint=lj_out)
    diag = ChainDiagnostics(
        names=tr.names,
        rhat={nm: split_rhat(theta_out[:, :, k]) for k, nm in enumerate(tr.names)},
        ess={nm: effective_sample_size(theta_out[:, :, k]) for k, nm in enumerate(tr.names)},
        accept_y=float(np.mean(acc["y"])) if acc["y"] else 0.0,
        accept_theta=float(np.mean(acc["theta"])),
        accept_scale=float(np.mean(acc["scale"])) if acc["scale"] else 0.0,
        divergences=divergences,
    )
    return samples, diag


def _natural_vector(params):
    return np.concatenate([[params.tau2, params.zeta, params.eta], params.beta])


def _init_state(panel, design, car, priors, tr, phi0, rng, adjacency):
    params = None
    for _ in range(50):
        phi = phi0 + 0.5 * rng.standard_normal(tr.dim)
        cand = tr.to_params(phi)
        if cand.is_admissible(car) and np.isfinite(priors.log_prior(cand, car)):
            params = cand
            break
    if params is None:
        phi = phi0.copy()
        params = tr.to_params(phi)
    alpha = linear_predictor(design, params.beta)
    if panel.T:
        mode = find_mode(panel, params, alpha, car)
        Y = mode.mu_star.copy()
    else:
        Y = np.zeros((0, panel.n_d))
    state = _ChainState(phi=phi, params=params, Y=Y, EY=np.exp(Y), alpha=alpha,
                        s0=0.0, s1=0.0, data=0.0,
                        lp_theta=priors.log_prior(params, car) + tr.log_jacobian(phi),
                        prop_chol=0.1 * np.eye(tr.dim))
    _refresh_quadratics(state, adjacency)
    state.data = _data_from_ey(state.EY, panel.counts,
                               params.eta * panel.prev_counts()) if panel.T else 0.0
    return state


def _preconditioner(panel, design, car, params):
    """Fixed per-block Cholesky factors of the Hessian at the current mode."""
    if panel.T == 0:
        return None
    alpha = linear_predictor(design, params.beta)
    mode = find_mode(panel, params, alpha, car)
    return np.ascontiguousarray(mode.chol_blocks)


def _update_latent(state, panel, car, precond, rng):
    """Preconditioned MALA sweep over time blocks; returns acceptance rate."""
    q = car_precision_block(car, state.params.zeta, state.params.tau2).toarray()
    c = state.params.eta * panel.prev_counts()
    normals = rng.standard_normal(state.Y.shape)
    unifs = rng.uniform(size=panel.T)
    accepted = kernels.mala_sweep(state.Y, state.EY, state.alpha, q, precond,
                                  panel.counts.astype(np.float64), c,
                                  state.eps, normals, unifs)
    return accepted / panel.T


def _update_theta(state, panel, design, car, priors, tr, rng, adjacency):
    """Joint random walk on the transformed parameters with learned covariance."""
    step = state.theta_scale * (state.prop_chol @ rng.standard_normal(tr.dim))
    phi_prop = state.phi + step
    params_prop = tr.to_params(phi_prop)
    if not params_prop.is_admissible(car):
        return 0
    lp_prop = priors.log_prior(params_prop, car)
    if not np.isfinite(lp_prop):
        return 0
    lp_prop += tr.log_jacobian(phi_prop)

    beta_changed = not np.array_equal(params_prop.beta, state.params.beta)
    if beta_changed:
        alpha_prop = linear_predictor(design, params_prop.beta)
        dev = state.Y - alpha_prop
        s0_prop = float(np.sum(dev * dev))
        s1_prop = float(np.sum(dev * (adjacency @ dev.T).T)) if dev.size else 0.0
    else:
        alpha_prop = state.alpha
        s0_prop, s1_prop = state.s0, state.s1
    if panel.T:
        quad_prop = (s0_prop - params_prop.zeta * s1_prop) / params_prop.tau2
        data_prop = _data_from_ey(state.EY, panel.counts,
                                  params_prop.eta * panel.prev_counts())
    else:
        quad_prop = 0.0
        data_prop = 0.0

    cur = state.data + _gauss_part(car, state.params, panel.T, panel.n_d,
                                   _quad(state)) + state.lp_theta
    prop = data_prop + _gauss_part(car, params_prop, panel.T, panel.n_d,
                                   quad_prop) + lp_prop
    if np.isfinite(prop) and np.log(rng.uniform()) < rw_log_acceptance(cur, prop):
        state.phi = phi_prop
        state.params = params_prop
        state.alpha = alpha_prop
        state.s0, state.s1 = s0_prop, s1_prop
        state.data = data_prop
        state.lp_theta = lp_prop
        return 1
    return 0


def _update_rescale(state, panel, car, priors, tr, rng):
    """Joint rescaling of (tau2, Y - alpha): non-centered move for tau2.

    Maps log tau2 -> log tau2 + 2*delta and Y -> alpha + e^delta (Y - alpha).
    The Gaussian prior change cancels against the map Jacobian, leaving only
    the data term, the tau2 prior and the transform Jacobian; the quadratic
    form (Y-alpha)' Q (Y-alpha) is invariant.
    """
    delta = state.rescale_step * rng.standard_normal()
    phi_prop = state.phi.copy()
    phi_prop[0] += 2.0 * delta
    params_prop = tr.to_params(phi_prop)
    if not params_prop.is_admissible(car):
        return 0
    scale = float(np.exp(delta))
    y_prop = state.alpha + scale * (state.Y - state.alpha)
    ey_prop = np.exp(y_prop)
    c = state.params.eta * panel.prev_counts()
    data_prop = _data_from_ey(ey_prop, panel.counts, c)
    lp_prop = priors.log_prior(params_prop, car) + tr.log_jacobian(phi_prop)
    if not np.isfinite(lp_prop) or not np.isfinite(data_prop):
        return 0
    log_a = (data_prop - state.data) + (lp_prop - state.lp_theta)
    if np.log(rng.uniform()) < log_a:
        state.Y = y_prop
        state.EY = ey_prop
        state.phi = phi_prop
        state.params = params_prop
        state.data = data_prop
        state.lp_theta = lp_prop
        state.s0 *= scale * scale
        state.s1 *= scale * scale
        return 1
    return 0


def _update_translate(state, panel, design, car, priors, tr, rng):
    """Joint translation of (beta, Y): non-centered move for the mean.

    Maps beta -> beta + delta and Y -> Y + X(beta' - beta), keeping Y - alpha
    and hence the whole Gaussian term invariant (map Jacobian 1); only the
    data term and the beta prior enter the acceptance ratio.
    """
    p = state.params.p
    delta = state.translate_step * rng.standard_normal(p)
    beta_prop = state.params.beta + delta
    params_prop = type(state.params)(eta=state.params.eta, zeta=state.params.zeta,
                                     tau2=state.params.tau2, beta=beta_prop)
    alpha_prop = linear_predictor(design, beta_prop)
    y_prop = state.Y + (alpha_prop - state.alpha)
    ey_prop = np.exp(y_prop)
    c = state.params.eta * panel.prev_counts()
    data_prop = _data_from_ey(ey_prop, panel.counts, c)
    # the transform jacobian only involves (tau2, zeta, eta), all unchanged
    lp_prop = priors.log_prior(params_prop, car) + tr.log_jacobian(state.phi)
    if not np.isfinite(lp_prop) or not np.isfinite(data_prop):
        return 0
    log_a = (data_prop - state.data) + (lp_prop - state.lp_theta)
    if np.log(rng.uniform()) < log_a:
        phi = state.phi.copy()
        phi[3:] = beta_prop
        state.phi = phi
        state.params = params_prop
        state.alpha = alpha_prop
        state.Y = y_prop
        state.EY = ey_prop
        state.data = data_prop
        state.lp_theta = lp_prop
        # Y - alpha unchanged: s0, s1 keep their values
        return 1
    return 0


def split_rhat(chains):
    """Gelman-Rubin statistic on split chains; chains is (m, L)."""
    m, L = chains.shape
    half = L // 2
    seqs = np.concatenate([chains[:, :half], chains[:, half: 2 * half]], axis=0)
    L = half
    means = seqs.mean(axis=1)
    w = float(np.mean(seqs.var(axis=1, ddof=1)))
    b = L * float(np.var(means, ddof=1))
    if w <= 0.0:
        return 1.0
    var_plus = (L - 1) / L * w + b / L
    return float(np.sqrt(var_plus / w))


def effective_sample_size(chains):
    """Multi-chain ESS with Geyer initial-monotone truncation."""
    m, L = chains.shape
    half = L // 2
    seqs = np.concatenate([chains[:, :half], chains[:, half: 2 * half]], axis=0)
    m2, L2 = seqs.shape
    if L2 < 4:
        return float(m2 * L2)
    means = seqs.mean(axis=1, keepdims=True)
    w = float(np.mean(seqs.var(axis=1, ddof=1)))
    b = L2 * float(np.var(seqs.mean(axis=1), ddof=1))
    var_plus = (L2 - 1) / L2 * w + b / L2
    if var_plus <= 0.0:
        return float(m2 * L2)
    centered = seqs - means
    n_fft = int(2 ** np.ceil(np.log2(2 * L2)))
    f = np.fft.rfft(centered, n=n_fft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=n_fft, axis=1)[:, :L2].real / L2
    mean_acov = acov.mean(axis=0)
    rho = 1.0 - (w - mean_acov) / var_plus
    rho[0] = 1.0
    tau = 1.0
    t = 1
    prev_pair = np.inf
    while t + 1 < L2:
        pair = rho[t] + rho[t + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev_pair)
        tau += 2.0 * pair
        prev_pair = pair
        t += 2
    return float(m2 * L2 / tau)


def posterior_summary(samples):
    """Means, sds and 2.5/50/97.5 percent quantiles per parameter."""
    if samples.n_kept == 0:
        raise ValueError("no post-warm-up draws to summarize")
    out = {}
    for k, name in enumerate(samples.names):
        x = samples.theta[:, :, k].ravel()
        out[name] = {
            "mean": float(np.mean(x)),
            "sd": float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
            "q025": float(np.quantile(x, 0.025)),
            "q50": float(np.quantile(x, 0.5)),
            "q975": float(np.quantile(x, 0.975)),
        }
    return out
