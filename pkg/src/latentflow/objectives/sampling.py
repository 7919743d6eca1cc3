from __future__ import annotations

import numpy as np

from .. import distributions as dist
from ..ndtensor import Rng
from .model import GenerativeModel


def ancestral_sample(gen: GenerativeModel, params, rng: Rng | None = None, n: int = 1,
                     eps: dict | None = None, sample_x: bool = True):
    """Sample latent blocks in topological order, then ``x``.

    Each block is ``z_i = mu_i(parents) + sigma_i(parents) * eps_i``.  Returns
    ``(blocks, x, log_joint)`` where ``log_joint`` is ``log p(x, z)`` when
    ``x`` is sampled and ``log p(z)`` otherwise.  Passing ``eps`` (block name
    to noise array) makes the whole draw deterministic.
    """
    if gen.prior is None:
        names, dims, order = ["z"], {"z": gen.latent_dim}, ["z"]
    else:
        names = list(gen.prior.blocks)
        dims = {k: b.dim for k, b in gen.prior.blocks.items()}
        order = gen.prior.order
    blocks = {}
    log_joint = np.zeros(n)
    for name in order:
        e = eps[name] if eps is not None else rng.normal((n, dims[name]))
        mu, log_sigma = (None, None) if gen.prior is None else gen.prior.conditional(params, name, blocks)
        if mu is None:
            z = np.asarray(e, dtype=np.float64)
            log_joint = log_joint + dist.standard_normal_logprob(z)
        else:
            q = dist.DiagGaussian(mu, log_sigma)
            z = q.rsample(e)
            log_joint = log_joint + q.logprob(z)
        blocks[name] = z
    z_all = np.concatenate([blocks[k] for k in names], axis=-1)
    means = gen.decode(params, z_all)
    if not sample_x:
        return blocks, means, log_joint
    if gen.likelihood == "bernoulli":
        x = rng.bernoulli(means) if rng is not None else (means >= 0.5).astype(np.float64)
    else:
        noise = rng.normal(means.shape) if rng is not None else np.zeros_like(means)
        x = means + gen.obs_sigma * noise
    log_joint = log_joint + gen.logpx(params, x, z_all)
    return blocks, x, log_joint


def model_sample(gen: GenerativeModel, params, n: int, rng: Rng, means: bool = True):
    """``n`` draws from the model: decoder means (default) or sampled observations."""
    if n == 0:
        return np.zeros((0, gen.data_dim))
    _, x, _ = ancestral_sample(gen, params, rng, n, sample_x=not means)
    return np.asarray(x)


def exact_marginal_linear_gaussian(x, W, sigma):
    """``log N(x; 0, W W^T + sigma^2 I)`` via a Cholesky factorization.

    ``x`` may be a single vector or a batch of rows.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    W = np.asarray(W, dtype=np.float64).reshape(x.shape[1], -1)
    C = W @ W.T + sigma ** 2 * np.eye(x.shape[1])
    Lc = np.linalg.cholesky(C)
    sol = np.linalg.solve(Lc, x.T)
    d = x.shape[1]
    out = -0.5 * np.sum(sol ** 2, axis=0) - np.sum(np.log(np.diag(Lc))) - 0.5 * d * np.log(2 * np.pi)
    return out if out.size > 1 else float(out[0])

