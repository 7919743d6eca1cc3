"""Log-densities and reparameterized samplers.

All functions are batched over leading axes and reduce over the last one,
so a ``(N, D)`` input yields ``N`` log-densities.  Inputs may be plain
arrays or :class:`~latentflow.ndtensor.Var` nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ndtensor import ops
from .ndtensor.tape import value_of

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_SIGMA_BOUNDS = (-7.0, 7.0)
P_EPS = 1e-7


def _check_last_dim(a, b, what):
    if np.shape(value_of(a))[-1:] != np.shape(value_of(b))[-1:]:
        raise ops.ShapeError(what, None, [np.shape(value_of(a)), np.shape(value_of(b))])


def clamp_log_sigma(log_sigma):
    return ops.clip(log_sigma, *LOG_SIGMA_BOUNDS)


def standard_normal_logprob(z):
    return ops.sum(-0.5 * ops.square(z) - HALF_LOG_2PI, axis=-1)


@dataclass
class DiagGaussian:
    mu: object
    log_sigma: object

    def __post_init__(self):
        _check_last_dim(self.mu, self.log_sigma, "DiagGaussian")

    def logprob(self, z):
        return diag_gaussian_logprob(z, self)

    def rsample(self, eps):
        return reparam_sample_diag(self, eps)


@dataclass
class FullCovGaussian:
    mu: object
    L: object  # (..., D, D), lower triangular

    def sample_and_logprob(self, eps):
        return fullcov_sample_and_logprob(self, eps)


@dataclass
class BernoulliVec:
    p: object

    def logprob(self, x):
        return bernoulli_logprob(x, self)


def diag_gaussian_logprob(z, q: DiagGaussian):
    _check_last_dim(z, q.mu, "diag_gaussian_logprob")
    log_sigma = q.log_sigma
    t = (z - q.mu) * ops.exp(-log_sigma)
    return ops.sum(-HALF_LOG_2PI - log_sigma - 0.5 * ops.square(t), axis=-1)


def reparam_sample_diag(q: DiagGaussian, eps):
    _check_last_dim(eps, q.mu, "reparam_sample_diag")
    return q.mu + ops.exp(q.log_sigma) * eps


def fullcov_sample_and_logprob(q: FullCovGaussian, eps):
    """``z = mu + L eps`` and ``log q(z) = log N(eps; 0, I) - sum log L_ii``."""
    L = q.L
    Lv = value_of(L)
    D = Lv.shape[-1]
    diag = np.diagonal(Lv, axis1=-2, axis2=-1)
    if np.any(diag <= 0):
        raise ValueError("full-covariance factor needs a strictly positive diagonal")
    _check_last_dim(eps, q.mu, "fullcov_sample_and_logprob")
    eps_col = ops.reshape(eps, np.shape(value_of(eps)) + (1,))
    Leps = ops.reshape(ops.matmul(L, eps_col), np.shape(value_of(eps)))
    z = q.mu + Leps
    eye = np.eye(D)
    log_diag = ops.log(ops.sum(L * eye, axis=-1))
    logq = standard_normal_logprob(eps) - ops.sum(log_diag, axis=-1)
    return z, logq


def build_masked_L(L_raw, sigma):
    """Strictly-lower part of ``L_raw`` plus ``diag(sigma)``."""
    D = np.shape(value_of(sigma))[-1]
    mask = np.tril(np.ones((D, D)), k=-1)
    sig_col = ops.reshape(sigma, np.shape(value_of(sigma)) + (1,))
    return L_raw * mask + sig_col * np.eye(D)


def bernoulli_logprob(x, b: BernoulliVec):
    xv = value_of(x)
    if not np.all((xv == 0.0) | (xv == 1.0)):
        raise ValueError("bernoulli_logprob needs binary observations")
    p = ops.clip(b.p, P_EPS, 1.0 - P_EPS)
    return ops.sum(x * ops.log(p) + (1.0 - x) * ops.log(1.0 - p), axis=-1)


def gaussian_logprob_iso(x, mean, log_sigma: float):
    """Diagonal Gaussian with one shared scalar ``log_sigma``."""
    t = (x - mean) * math.exp(-log_sigma)
    return ops.sum(-HALF_LOG_2PI - log_sigma - 0.5 * ops.square(t), axis=-1)


def kl_diag_standard_normal(mu, log_sigma):
    """Per-dimension ``KL(N(mu, sigma^2) || N(0, 1))``, not reduced."""
    return 0.5 * (ops.square(mu) + ops.exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma)
