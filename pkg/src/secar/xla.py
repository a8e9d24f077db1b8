"""Extended Laplace approximation: high-order derivative fields at the mode,
per-block inverse Hessians, and the corrected log-marginal.

Corrections decompose over time blocks (cross-block inverse-Hessian entries
are exactly zero). The third-derivative pair term runs over all ordered
pairs within a block.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import kernels
from .mode import find_mode, la1_from_mode, ModeError
from .model import linear_predictor


@dataclass
class DerivativeField:
    """Pure 3rd/4th/6th per-cell derivatives of g at the mode, shape (T, n_d)."""

    g3: np.ndarray
    g4: np.ndarray
    g6: np.ndarray


@dataclass
class HessianInverseBlocks:
    """Per-time dense inverses of the block Hessians, with diagonal accessor."""

    blocks: np.ndarray

    @property
    def gii(self):
        return np.diagonal(self.blocks, axis1=1, axis2=2)


def g_derivatives(mode, panel, params):
    """Evaluate the 3rd/4th/6th derivative fields of g at the converged mode."""
    prev = panel.prev_counts()
    c = (params.eta * prev).ravel()
    z = panel.counts.ravel().astype(np.float64)
    g3, g4, g6 = kernels.g_derivs(mode.mu_star.ravel(), z, c)
    shape = mode.mu_star.shape
    return DerivativeField(g3.reshape(shape), g4.reshape(shape), g6.reshape(shape))


def invert_hessian_blocks(mode):
    """Dense per-block inverse via the retained Cholesky factors."""
    T, n = mode.T, mode.n_d
    eye = np.eye(n)
    blocks = np.empty((T, n, n))
    for t in range(T):
        blocks[t] = sla.cho_solve((mode.chol_blocks[t], True), eye)
    return HessianInverseBlocks(blocks)


def correction_terms(mode, derivs, inv_blocks, include_sixth=True):
    """Correction triple (c4, c3_pair, c6) added to the first-order value.

    c4 = -sum (1/8)  g4 (g^ii)^2
    c6 = -sum (1/48) g6 (g^ii)^3           (0.0 when include_sixth is off)
    c3 = sum over blocks of the ordered-pair reduction
         sum_ij g3_i g3_j (6 (g^ij)^3 + 9 g^ii g^jj g^ij) / 72
    """
    gii = inv_blocks.gii
    c4 = -float(np.sum(derivs.g4 * gii ** 2)) / 8.0
    c6 = -float(np.sum(derivs.g6 * gii ** 3)) / 48.0 if include_sixth else 0.0
    c3 = 0.0
    for t in range(mode.T):
        c3 += kernels.pair_term(np.ascontiguousarray(derivs.g3[t]), inv_blocks.blocks[t])
    return c4, c3, c6


def xla_from_mode(mode, panel, params, car, log_prior=0.0, include_sixth=True):
    """Assemble the extended Laplace log-posterior from a converged mode."""
    la1 = la1_from_mode(mode, params, car, log_prior)
    derivs = g_derivatives(mode, panel, params)
    inv_blocks = invert_hessian_blocks(mode)
    c4, c3, c6 = correction_terms(mode, derivs, inv_blocks, include_sixth)
    return la1 + c4 + c3 + c6


def xla_log_posterior(panel, params, design, car, priors=None, include_sixth=True,
                      start=None, tol=1e-8):
    """Extended Laplace approximation of the log-posterior at theta.

    Equals :func:`secar.mode.la1_log_posterior` plus the fourth-order,
    pair and (optionally) sixth-order corrections. ``priors=None`` drops the
    prior terms.
    """
    alpha = linear_predictor(design, params.beta)
    mode = find_mode(panel, params, alpha, car, start=start, tol=tol)
    if not mode.converged:
        raise ModeError("latent mode iteration did not converge")
    lp = priors.log_prior(params, car) if priors is not None else 0.0
    return xla_from_mode(mode, panel, params, car, lp, include_sixth)
