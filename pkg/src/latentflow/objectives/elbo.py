"""ELBO estimators, gradient estimators and importance-weighted likelihoods."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import distributions as dist
from ..ndtensor import Rng, Tape, ops
from ..ndtensor.tape import value_of
from .model import Vae


class NonFiniteElbo(FloatingPointError):
    def __init__(self, terms: dict):
        self.terms = terms
        super().__init__("non-finite ELBO term: " + ", ".join(f"{k}={v}" for k, v in terms.items()))


class ConfigurationError(ValueError):
    pass


@dataclass
class ElboReport:
    """Per-datapoint terms; ``elbo == logpx + logpz - logqz`` elementwise."""

    logpx: object
    logpz: object
    logqz: object
    elbo: object
    group_kl: object = None  # (N, D) analytic per-dimension KL, when available
    z: object = None

    def summary(self) -> dict[str, float]:
        m = {k: float(np.mean(value_of(getattr(self, k)))) for k in ("logpx", "logpz", "logqz", "elbo")}
        m["kl_est"] = m["logqz"] - m["logpz"]
        return m


def _check_finite(report: ElboReport):
    vals = {k: np.asarray(value_of(getattr(report, k))) for k in ("logpx", "logpz", "logqz", "elbo")}
    if not all(np.all(np.isfinite(v)) for v in vals.values()):
        raise NonFiniteElbo({k: float(np.mean(v)) for k, v in vals.items()})


def _analytic_kl_available(vae: Vae) -> bool:
    return vae.post.spec.kind == "diag" and vae.gen.standard_prior


def elbo_estimate(x, vae: Vae, params, rng: Rng | None = None, eps=None,
                  analytic_kl: bool = False) -> ElboReport:
    """Single-sample ELBO per datapoint.

    With ``analytic_kl`` (diagonal posterior, standard-normal prior only) the
    prior and posterior terms are replaced by their closed-form
    expectations, so ``logpz - logqz = -KL``.
    """
    fr = vae.post.sample_and_logq(params, x, rng=rng, eps=eps)
    logpx = vae.gen.logpx(params, x, fr.z)
    group_kl = None
    if _analytic_kl_available(vae):
        group_kl = dist.kl_diag_standard_normal(fr.mu, fr.log_sigma)
    if analytic_kl:
        if group_kl is None:
            raise ConfigurationError("analytic KL needs a diagonal posterior and a standard-normal prior")
        var = ops.exp(2.0 * fr.log_sigma)
        logpz = ops.sum(-0.5 * (ops.square(fr.mu) + var) - dist.HALF_LOG_2PI, axis=-1)
        logqz = ops.sum(-0.5 - dist.HALF_LOG_2PI - fr.log_sigma, axis=-1)
    else:
        logpz = vae.gen.logpz(params, fr.z)
        logqz = fr.log_q
    report = ElboReport(logpx, logpz, logqz, logpx + logpz - logqz, group_kl, fr.z)
    _check_finite(report)
    return report


def elbo_objective(report: ElboReport):
    return ops.mean(report.elbo)


def kl_annealed_elbo(x, vae: Vae, params, beta: float, rng=None, eps=None):
    """Minibatch mean of ``logpx + beta * (logpz - logqz)``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    r = elbo_estimate(x, vae, params, rng=rng, eps=eps)
    return ops.mean(r.logpx + beta * (r.logpz - r.logqz)), r


def anneal_beta(step: int, anneal_steps: int) -> float:
    if anneal_steps <= 0:
        return 1.0
    return min(1.0, step / anneal_steps)


def group_kl_means(per_dim_kl, groups: int):
    """Minibatch mean of the KL summed within each contiguous group: shape ``(groups,)``."""
    N, D = np.shape(value_of(per_dim_kl))
    if groups < 1 or D % groups:
        raise ConfigurationError(f"free-bits groups ({groups}) must evenly divide latent dims ({D})")
    grouped = ops.sum(ops.reshape(per_dim_kl, (N, groups, D // groups)), axis=-1)
    return ops.mean(grouped, axis=0)


def free_bits_penalty(group_kl, lam: float):
    """``sum_j max(lam, KL_j)`` over per-group minibatch-mean KLs."""
    n = np.shape(value_of(group_kl))[-1]
    return ops.sum(ops.maximum(group_kl, np.full(n, float(lam))))


def free_bits_objective(x, vae: Vae, params, lam: float, groups: int, rng=None, eps=None):
    """``mean(logpx) - sum_j max(lam, mean_x KL_j)`` with analytic KL per group."""
    if lam < 0:
        raise ValueError("free-bits floor must be nonnegative")
    if not _analytic_kl_available(vae):
        raise ConfigurationError("free bits needs a diagonal posterior and a standard-normal prior")
    r = elbo_estimate(x, vae, params, rng=rng, eps=eps, analytic_kl=True)
    penalty = free_bits_penalty(group_kl_means(r.group_kl, groups), lam)
    return ops.mean(r.logpx) - penalty, r


def elbo_gradient(x, vae: Vae, params, rng=None, eps=None):
    """Pathwise gradient of the minibatch-mean ELBO for every parameter."""
    tape = Tape()
    pv = tape.params_from(params)
    r = elbo_estimate(x, vae, pv, rng=rng, eps=eps)
    obj = elbo_objective(r)
    return tape.backward(obj), r


def _logmeanexp(a, axis=0):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.mean(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def log_weights(x, vae: Vae, params, eps):
    """``log p(x, z) - log q(z|x)`` for noise ``eps`` of shape ``(L, N, D)``."""
    x = np.asarray(x, dtype=np.float64)
    L, N, D = eps.shape
    xt = np.broadcast_to(x, (L,) + x.shape).reshape(L * N, -1)
    r = elbo_estimate(xt, vae, params, eps=eps.reshape(L * N, D))
    return np.asarray(value_of(r.elbo)).reshape(L, N)


def iwae_objective(x, vae: Vae, params, eps):
    """Differentiable minibatch mean of the importance-weighted bound."""
    L, N, D = eps.shape
    x = np.asarray(x, dtype=np.float64)
    xt = np.broadcast_to(x, (L,) + x.shape).reshape(L * N, -1)
    r = elbo_estimate(xt, vae, params, eps=eps.reshape(L * N, D))
    lw = ops.reshape(r.elbo, (L, N))
    shift = np.max(value_of(lw), axis=0)
    return ops.mean(ops.log(ops.mean(ops.exp(lw - shift), axis=0)) + shift)


def iwae_loglik_estimate(x, vae: Vae, params, L: int, rng: Rng | None = None, eps=None,
                         chunk: int = 1000):
    """Per-datapoint ``log (1/L) sum_l p(x, z_l) / q(z_l|x)``.

    Chunks of samples are combined exactly through a running log-sum-exp.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    N, D = x.shape[0], vae.post.spec.latent_dim
    if eps is None:
        eps = rng.normal((L, N, D))
    lw = []
    for s in range(0, L, chunk):
        lw.append(log_weights(x, vae, params, eps[s:s + chunk]))
    lw = np.concatenate(lw, axis=0)
    return _logmeanexp(lw, axis=0)


# --- score-function estimator ------------------------------------------------

def _require_diag(vae: Vae):
    if vae.post.spec.kind != "diag":
        raise ConfigurationError("the score-function estimator is implemented for diagonal posteriors")


def score_function_gradient(x, vae: Vae, params, rng=None, eps=None):
    """REINFORCE estimate of the ELBO gradient w.r.t. the inference parameters.

    Surrogate: ``mean(stop(f(z)) * log q(stop(z)|x))`` with
    ``f = log p(x, z) - log q(z|x)``; its gradient is ``f * grad log q``.
    """
    _require_diag(vae)
    x = np.asarray(x, dtype=np.float64)
    num = elbo_estimate(x, vae, params, rng=rng, eps=eps)
    z = np.asarray(num.z)
    f = np.asarray(num.elbo)
    tape = Tape()
    phi = vae.phi_names(params)
    pv = {k: (tape.param(k, v) if k in phi else v) for k, v in params.items()}
    heads = vae.post.encode(pv, x)
    logq = dist.diag_gaussian_logprob(z, dist.DiagGaussian(heads["mu"], heads["log_sigma"]))
    surrogate = ops.mean(f * logq)
    return tape.backward(surrogate)


def per_sample_variational_gradients(x, vae: Vae, params, n: int, rng: Rng, estimator: str):
    """``n`` single-sample gradient estimates for one datapoint ``x``.

    Coordinates are the variational parameters ``(mu, log_sigma)`` emitted
    by the encoder for ``x``; the gradient w.r.t. encoder weights is a fixed
    linear image of these.  Returns an ``(n, 2D)`` array.
    """
    _require_diag(vae)
    if estimator not in ("reparam", "score"):
        raise ValueError(f"unknown estimator {estimator!r}")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    heads = vae.post.encode(params, x)
    D = vae.post.spec.latent_dim
    mu0 = np.broadcast_to(heads["mu"], (n, D))
    ls0 = np.broadcast_to(heads["log_sigma"], (n, D))
    eps = rng.normal((n, D))
    xt = np.broadcast_to(x, (n, x.shape[1]))
    tape = Tape()
    mu = tape.param("mu", mu0)
    ls = tape.param("log_sigma", ls0)
    q = dist.DiagGaussian(mu, ls)
    if estimator == "reparam":
        z = q.rsample(eps)
        f = vae.gen.logpx(params, xt, z) + vae.gen.logpz(params, z) - q.logprob(z)
        g = tape.backward(ops.sum(f))
    else:
        z = np.asarray(mu0 + np.exp(ls0) * eps)
        q0 = dist.DiagGaussian(mu0, ls0)
        f = np.asarray(vae.gen.logpx(params, xt, z) + vae.gen.logpz(params, z) - q0.logprob(z))
        g = tape.backward(ops.sum(f * q.logprob(z)))
    return np.concatenate([g["mu"], g["log_sigma"]], axis=1)

