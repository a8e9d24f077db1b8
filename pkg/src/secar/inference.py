"""Posterior maximization over theta, uncertainty, and surface exploration.

Optimization runs in an unconstrained reparameterization (log tau2, scaled
logits for zeta and eta, raw beta) of the natural-scale log-posterior, with
gradient and Hessian from central finite differences. The reported mode is
therefore the natural-scale posterior mode; no transform Jacobians enter the
objective. Mode finds are warm-started across stencil evaluations.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .mode import find_mode, la1_from_mode, default_start
from .model import linear_predictor, ModelParams
from .xla import xla_from_mode

METHODS = ("la1", "xla", "xla-no6")
FD_STEP = 1e-4
GRAD_TOL = 1e-5
MAX_NEWTON = 50
_PHI_CLIP = 35.0


class FitError(RuntimeError):
    """Raised when posterior maximization fails outright."""


@dataclass(frozen=True)
class PriorSpec:
    """Default vague proper priors; any component can be replaced.

    tau ~ half-Cauchy(tau_scale) (density carried to the tau2 axis), zeta
    uniform on ``zeta_interval`` (admissible interval of the graph when None),
    eta uniform on (0, 1), beta iid Gaussian with variance beta_var. Custom
    ``*_logpdf`` callables override the corresponding built-in.
    """

    tau_scale: float = 5.0
    zeta_interval: tuple = None
    beta_var: float = 1000.0
    tau2_logpdf: callable = None
    zeta_logpdf: callable = None
    eta_logpdf: callable = None
    beta_logpdf: callable = None

    def zeta_support(self, car):
        if self.zeta_interval is not None:
            return self.zeta_interval
        return car.zeta_bounds

    def log_prior(self, params, car):
        lo, hi = self.zeta_support(car)
        if not (lo < params.zeta < hi) or not (0.0 <= params.eta < 1.0) or params.tau2 <= 0.0:
            return -np.inf
        if self.tau2_logpdf is not None:
            lp = self.tau2_logpdf(params.tau2)
        else:
            tau = np.sqrt(params.tau2)
            scale = self.tau_scale
            # half-Cauchy on tau, times |d tau / d tau2| = 1/(2 tau)
            lp = (np.log(2.0 / (np.pi * scale)) - np.log1p((tau / scale) ** 2)
                  - np.log(2.0 * tau))
        if self.zeta_logpdf is not None:
            lp += self.zeta_logpdf(params.zeta)
        elif np.isfinite(hi - lo):
            lp += -np.log(hi - lo)
        if self.eta_logpdf is not None:
            lp += self.eta_logpdf(params.eta)
        if self.beta_logpdf is not None:
            lp += self.beta_logpdf(params.beta)
        else:
            lp += float(np.sum(norm.logpdf(params.beta, scale=np.sqrt(self.beta_var))))
        return float(lp)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)  # keeps boundary cases finite
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class ParamTransform:
    """Bijection between natural parameters and the unconstrained scale.

    phi = (log tau2, logit of zeta within its interval, logit eta, beta...).
    """

    zeta_lo: float
    zeta_hi: float
    p: int

    @classmethod
    def for_problem(cls, car, priors, p):
        lo, hi = priors.zeta_support(car)
        if not np.isfinite(lo) or not np.isfinite(hi):
            # degenerate spectrum: fall back to a wide fixed interval
            lo = -1.0 if not np.isfinite(lo) else lo
            hi = 1.0 if not np.isfinite(hi) else hi
        return cls(zeta_lo=lo, zeta_hi=hi, p=p)

    @property
    def dim(self):
        return 3 + self.p

    @property
    def names(self):
        return ["tau2", "zeta", "eta"] + [f"beta{k}" for k in range(self.p)]

    def to_phi(self, params):
        zs = (params.zeta - self.zeta_lo) / (self.zeta_hi - self.zeta_lo)
        return np.concatenate([[np.log(params.tau2), _logit(zs), _logit(params.eta)],
                               params.beta])

    def to_params(self, phi):
        phi = np.clip(np.asarray(phi, dtype=np.float64), -_PHI_CLIP, _PHI_CLIP)
        tau2 = np.exp(phi[0])
        zeta = self.zeta_lo + (self.zeta_hi - self.zeta_lo) * _sigmoid(phi[1])
        eta = _sigmoid(phi[2])
        return ModelParams(eta=eta, zeta=zeta, tau2=tau2, beta=phi[3:].copy())

    def log_jacobian(self, phi):
        """log |d theta / d phi|, needed when sampling on the phi scale."""
        phi = np.clip(np.asarray(phi, dtype=np.float64), -_PHI_CLIP, _PHI_CLIP)

        def log_sig_deriv(x):
            ax = abs(x)
            return -ax - 2.0 * np.log1p(np.exp(-ax))

        return float(phi[0]
                     + np.log(self.zeta_hi - self.zeta_lo) + log_sig_deriv(phi[1])
                     + log_sig_deriv(phi[2]))

    def coord_to_natural(self, k, value):
        """Back-transform a single phi coordinate (monotone per coordinate)."""
        if k == 0:
            return float(np.exp(np.clip(value, -_PHI_CLIP, _PHI_CLIP)))
        if k == 1:
            return float(self.zeta_lo + (self.zeta_hi - self.zeta_lo) * _sigmoid(value))
        if k == 2:
            return float(_sigmoid(value))
        return float(value)


@dataclass
class GridPoint:
    phi: np.ndarray
    params: ModelParams
    log_posterior: float
    weight: float = 0.0


@dataclass
class GridSpec:
    """Axis-aligned exploration grid in Hessian eigendirections."""

    spacing: float = 0.75
    cutoff: float = 6.0
    max_points: int = 10000


@dataclass
class PosteriorFit:
    method: str
    params_hat: ModelParams
    phi_hat: np.ndarray
    log_posterior: float
    hessian: np.ndarray
    cov: np.ndarray
    converged: bool
    n_evals: int
    newton_steps: int
    transform: ParamTransform
    priors_included: bool
    message: str = ""
    grid: list = None
    trace: list = field(default_factory=list)
    hessian_nd: bool = True

    @property
    def names(self):
        return self.transform.names


class LaplaceObjective:
    """Callable phi -> approximate log-posterior, with warm-started modes."""

    def __init__(self, panel, design, car, priors, method="xla", include_priors=True,
                 mode_tol=1e-8):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        self.panel = panel
        self.design = design
        self.car = car
        self.priors = priors
        self.method = method
        self.include_priors = include_priors
        self.mode_tol = mode_tol
        self.n_evals = 0
        self._warm = None

    def __call__(self, phi):
        params = self.transform.to_params(phi)
        return self.evaluate(params)

    @property
    def transform(self):
        if not hasattr(self, "_transform"):
            self._transform = ParamTransform.for_problem(self.car, self.priors, self.design.p)
        return self._transform

    def evaluate(self, params):
        self.n_evals += 1
        if not params.is_admissible(self.car):
            return -np.inf
        alpha = linear_predictor(self.design, params.beta)
        start = self._warm if self._warm is not None else default_start(self.panel, alpha)
        mode = find_mode(self.panel, params, alpha, self.car, start=start, tol=self.mode_tol)
        if not mode.converged:
            # retry cold before giving up on this point
            mode = find_mode(self.panel, params, alpha, self.car, tol=self.mode_tol)
            if not mode.converged:
                return -np.inf
        self._warm = mode.mu_star
        lp = self.priors.log_prior(params, self.car) if self.include_priors else 0.0
        if not np.isfinite(lp):
            return -np.inf
        if self.method == "la1":
            return la1_from_mode(mode, params, self.car, lp)
        return xla_from_mode(mode, self.panel, params, self.car, lp,
                             include_sixth=(self.method == "xla"))


def _fd_steps(phi, rel=FD_STEP):
    return rel * np.maximum(1.0, np.abs(phi))


def fd_gradient(fun, phi, f0=0.0, rel=FD_STEP):
    """Central-difference gradient; non-finite evaluations are floored far
    below f0 so the step points back into the feasible region."""
    h = _fd_steps(phi, rel)
    d = phi.shape[0]
    floor = f0 - 1e6

    def safe(x):
        val = fun(x)
        return val if np.isfinite(val) else floor

    grad = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        grad[i] = (safe(phi + e) - safe(phi - e)) / (2.0 * h[i])
    return grad


def fd_hessian(fun, phi, f0, rel=FD_STEP):
    h = _fd_steps(phi, rel)
    d = phi.shape[0]
    floor = f0 - 1e6

    def safe(x):
        val = fun(x)
        return val if np.isfinite(val) else floor

    hess = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        hess[i, i] = (safe(phi + ei) - 2.0 * f0 + safe(phi - ei)) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                safe(phi + ei + ej) - safe(phi + ei - ej)
                - safe(phi - ei + ej) + safe(phi - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


def default_start_params(panel, design, car, priors):
    """Heuristic admissible starting point."""
    lo, hi = priors.zeta_support(car)
    zeta0 = lo + 0.5 * (hi - lo) if np.isfinite(hi - lo) else 0.0
    mean_z = float(np.mean(panel.counts)) if panel.n_cells else 1.0
    beta = np.zeros(design.p)
    beta[0] = np.log(mean_z + 0.1)
    return ModelParams(eta=0.2, zeta=zeta0, tau2=0.5, beta=beta)


def maximize_posterior(panel, design, car, priors, method="xla", start=None,
                       include_priors=True, grad_tol=GRAD_TOL, max_steps=MAX_NEWTON,
                       fd_step=FD_STEP):
    """Newton-Raphson on the transformed scale with finite-difference
    derivatives; falls back to steepest ascent when the Hessian is not
    negative definite. Converges on gradient max-norm < ``grad_tol``."""
    obj = LaplaceObjective(panel, design, car, priors, method=method,
                           include_priors=include_priors)
    tr = obj.transform
    if start is None:
        start = default_start_params(panel, design, car, priors)
    start.validate(car)
    phi = tr.to_phi(start)
    f0 = obj(phi)
    if not np.isfinite(f0):
        raise FitError("log-posterior not finite at the starting point")

    trace = [(phi.copy(), f0)]
    converged = False
    message = ""
    fallback_steps = 0
    steps = 0
    for steps in range(1, max_steps + 1):
        grad = fd_gradient(obj, phi, f0=f0, rel=fd_step)
        if float(np.max(np.abs(grad))) < grad_tol:
            converged = True
            break
        hess = fd_hessian(obj, phi, f0, rel=fd_step)
        eigvals = np.linalg.eigvalsh(hess)
        if np.all(eigvals < 0.0):
            direction = np.linalg.solve(hess, -grad)
        else:
            # far from the mode the surface can be non-concave
            fallback_steps += 1
            direction = grad / max(1.0, float(np.max(np.abs(grad))))
        scale = 1.0
        improved = False
        for _ in range(40):
            cand = phi + scale * direction
            f_cand = obj(cand)
            if np.isfinite(f_cand) and f_cand > f0 - 1e-12:
                phi, f0 = cand, f_cand
                improved = True
                break
            scale *= 0.5
        trace.append((phi.copy(), f0))
        if not improved:
            message = "line search stalled"
            break

    hess = fd_hessian(obj, phi, f0, rel=fd_step)
    cov, hessian_nd = _covariance_from_hessian(hess)
    params_hat = tr.to_params(phi)
    if not converged and not message:
        message = f"no convergence in {max_steps} Newton steps"
    if converged and fallback_steps:
        message = f"{fallback_steps} steepest-ascent step(s) before convergence"
    return PosteriorFit(method=method, params_hat=params_hat, phi_hat=phi,
                        log_posterior=f0, hessian=hess, cov=cov, converged=converged,
                        n_evals=obj.n_evals, newton_steps=steps, transform=tr,
                        priors_included=include_priors, message=message, trace=trace,
                        hessian_nd=hessian_nd)


def _covariance_from_hessian(hess):
    vals, vecs = np.linalg.eigh(-hess)
    nd = bool(np.all(vals > 0.0))
    vals = np.maximum(vals, 1e-12)
    return (vecs / vals) @ vecs.T, nd


def credible_intervals(fit, level=0.95):
    """Gaussian intervals on the transformed scale, back-transformed
    endpoint-wise (monotone per coordinate)."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if not fit.hessian_nd:
        raise FitError("posterior Hessian is not negative definite; "
                       "Gaussian intervals are unavailable")
    zq = norm.ppf(0.5 * (1.0 + level))
    sds = np.sqrt(np.maximum(np.diag(fit.cov), 0.0))
    out = {}
    for k, name in enumerate(fit.names):
        lo = fit.transform.coord_to_natural(k, fit.phi_hat[k] - zq * sds[k])
        hi = fit.transform.coord_to_natural(k, fit.phi_hat[k] + zq * sds[k])
        out[name] = (min(lo, hi), max(lo, hi))
    return out


def _explore(objective, phi_hat, f_hat, hess, spec):
    """Breadth-first enumeration of the eigen-scaled integer grid around the
    mode, pre-screened by the quadratic surrogate, pruned at ``spec.cutoff``
    nats below the mode."""
    vals, vecs = np.linalg.eigh(-hess)
    vals = np.maximum(vals, 1e-12)
    sd = 1.0 / np.sqrt(vals)
    d = phi_hat.shape[0]
    step = spec.spacing

    def phi_of(zvec):
        return phi_hat + vecs @ (step * sd * np.asarray(zvec, dtype=np.float64))

    origin = tuple([0] * d)
    points = {origin: (phi_hat.copy(), f_hat)}
    frontier = [origin]
    surrogate_margin = 2.0
    while frontier:
        new_frontier = []
        for zvec in frontier:
            for axis in range(d):
                for delta in (-1, 1):
                    cand = list(zvec)
                    cand[axis] += delta
                    cand = tuple(cand)
                    if cand in points:
                        continue
                    pred_drop = 0.5 * step ** 2 * sum(c * c for c in cand)
                    if pred_drop > spec.cutoff + surrogate_margin:
                        continue
                    phi = phi_of(cand)
                    f = objective(phi)
                    points[cand] = (phi, f)
                    if np.isfinite(f) and f_hat - f <= spec.cutoff:
                        new_frontier.append(cand)
                    if len(points) >= spec.max_points:
                        warnings.warn(f"grid exploration capped at {spec.max_points} points",
                                      stacklevel=3)
                        new_frontier = []
                        frontier = []
                        break
                else:
                    continue
                break
        frontier = new_frontier

    kept = [(phi, f) for phi, f in points.values()
            if np.isfinite(f) and f_hat - f <= spec.cutoff]
    logw = np.array([f for _, f in kept])
    w = np.exp(logw - np.max(logw))
    w /= np.sum(w)
    return [(phi, f, wi) for (phi, f), wi in zip(kept, w)]


def explore_grid(fit, panel, design, car, priors, spec=None):
    """Evaluate the fitted objective on a pruned grid and attach normalized
    weights; returns a new fit with ``grid`` populated."""
    spec = spec or GridSpec()
    obj = LaplaceObjective(panel, design, car, priors, method=fit.method,
                           include_priors=fit.priors_included)
    raw = _explore(obj, fit.phi_hat, fit.log_posterior, fit.hessian, spec)
    grid = [GridPoint(phi=phi, params=fit.transform.to_params(phi),
                      log_posterior=f, weight=w) for phi, f, w in raw]
    return replace(fit, grid=grid)


def latent_marginal(fit, panel, design, car):
    """Mixture-of-Gaussians moments of the latent field over the grid.

    Falls back to the single Gaussian approximation at the mode when no grid
    has been attached. Returns (mean, variance) fields of shape (T, n_d).
    """
    from .xla import invert_hessian_blocks  # local import to avoid cycle

    points = fit.grid
    if not points:
        points = [GridPoint(phi=fit.phi_hat, params=fit.params_hat,
                            log_posterior=fit.log_posterior, weight=1.0)]
    mean = np.zeros((panel.T, panel.n_d))
    second = np.zeros((panel.T, panel.n_d))
    warm = None
    for pt in points:
        alpha = linear_predictor(design, pt.params.beta)
        mode = find_mode(panel, pt.params, alpha, car, start=warm)
        warm = mode.mu_star
        gii = invert_hessian_blocks(mode).gii
        mean += pt.weight * mode.mu_star
        second += pt.weight * (gii + mode.mu_star ** 2)
    return mean, second - mean ** 2


def sample_theta(fit, n, seed):
    """Draw parameter vectors from the Gaussian approximation on the
    transformed scale and map them back to natural parameters."""
    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(fit.phi_hat, fit.cov, size=n,
                                    method="cholesky" if _is_pd(fit.cov) else "svd")
    return [fit.transform.to_params(phi) for phi in draws]


def _is_pd(a):
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False
