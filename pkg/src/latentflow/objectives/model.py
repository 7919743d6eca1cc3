"""Generative models: priors over the latent vector and the decoder likelihood."""

from __future__ import annotations

import graphlib
import math
from dataclasses import dataclass, field

import numpy as np

from .. import distributions as dist
from ..flows import InferenceModel, PosteriorSpec
from ..ndtensor import Rng, ops
from ..networks import Mlp

LIKELIHOODS = ("bernoulli", "gaussian")


@dataclass
class LatentBlock:
    name: str
    dim: int
    parents: list[str] = field(default_factory=list)


class HierarchicalPrior:
    """Directed prior over latent blocks.

    Root blocks are ``N(0, I)``; a block with parents is a diagonal Gaussian
    whose mean and log-scale come from an MLP over the concatenated parent
    values.  The flat latent vector stores blocks in declaration order.
    """

    def __init__(self, blocks: list[LatentBlock], hidden: int = 32):
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate latent block names")
        self.blocks = {b.name: b for b in blocks}
        for b in blocks:
            for p in b.parents:
                if p not in self.blocks:
                    raise ValueError(f"block {b.name!r} has unknown parent {p!r}")
        sorter = graphlib.TopologicalSorter({b.name: b.parents for b in blocks})
        try:
            self.order = list(sorter.static_order())
        except graphlib.CycleError as exc:
            raise ValueError(f"latent blocks contain a cycle: {exc.args[1]}") from None
        self.slices, start = {}, 0
        for b in blocks:
            self.slices[b.name] = slice(start, start + b.dim)
            start += b.dim
        self.dim = start
        self.nets = {
            b.name: Mlp(f"prior.{b.name}",
                        [sum(self.blocks[p].dim for p in b.parents), hidden, 2 * b.dim])
            for b in blocks if b.parents
        }

    def init(self, rng: Rng):
        params = {}
        for i, name in enumerate(sorted(self.nets)):
            params.update(self.nets[name].init(rng.substream(i)))
        return params

    def conditional(self, params, name, values):
        b = self.blocks[name]
        if not b.parents:
            return None, None
        pa = ops.concat([values[p] for p in b.parents], axis=-1)
        out = self.nets[name](params, pa)
        return out[..., :b.dim], dist.clamp_log_sigma(out[..., b.dim:])

    def split(self, z):
        return {name: z[..., s] for name, s in self.slices.items()}

    def logprob(self, params, z):
        values = self.split(z)
        total = 0.0
        for name in self.order:
            mu, log_sigma = self.conditional(params, name, values)
            if mu is None:
                total = total + dist.standard_normal_logprob(values[name])
            else:
                total = total + dist.diag_gaussian_logprob(values[name],
                                                           dist.DiagGaussian(mu, log_sigma))
        return total


@dataclass
class GenerativeModel:
    latent_dim: int
    data_dim: int
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    likelihood: str = "bernoulli"
    obs_sigma: float = 1.0
    prior: HierarchicalPrior | None = None

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.obs_sigma <= 0:
            raise ValueError("obs_sigma must be positive")
        if self.prior is not None and self.prior.dim != self.latent_dim:
            raise ValueError(f"prior covers {self.prior.dim} dims, latent_dim is {self.latent_dim}")
        self.decoder = Mlp("dec", [self.latent_dim, *self.hidden, self.data_dim])

    @property
    def standard_prior(self) -> bool:
        return self.prior is None

    def init(self, rng: Rng, zero_decoder: bool = False):
        params = self.decoder.init(rng.substream(0), zero_last=zero_decoder)
        if zero_decoder:
            for k in list(params):
                params[k] = np.zeros_like(params[k])
        if self.prior is not None:
            params.update(self.prior.init(rng.substream(1)))
        return params

    def decode(self, params, z):
        """Bernoulli probabilities or Gaussian means for each ``z``."""
        out = self.decoder(params, z)
        return ops.sigmoid(out) if self.likelihood == "bernoulli" else out

    def logpz(self, params, z):
        if self.prior is None:
            return dist.standard_normal_logprob(z)
        return self.prior.logprob(params, z)

    def logpx(self, params, x, z):
        out = self.decode(params, z)
        if self.likelihood == "bernoulli":
            return dist.bernoulli_logprob(x, dist.BernoulliVec(out))
        return dist.gaussian_logprob_iso(x, out, math.log(self.obs_sigma))

    def linear_gaussian_parts(self, params):
        """``(W, b, sigma)`` with ``x = W z + b + sigma * noise``; linear decoders only."""
        if self.hidden or self.likelihood != "gaussian" or self.prior is not None:
            raise ValueError("model is not linear-Gaussian")
        return params["dec.W0"].T, params["dec.b0"], self.obs_sigma


def decoder_forward(dec: Mlp, params, z):
    return dist.BernoulliVec(ops.sigmoid(dec(params, z)))


def encoder_forward(model: InferenceModel, params, x):
    """``(mu, log_sigma, h, L_raw)``; absent heads come back as ``None``."""
    heads = model.encode(params, x)
    return heads["mu"], heads["log_sigma"], heads.get("h"), heads.get("L_raw")


@dataclass
class Vae:
    """A generative model paired with its amortized posterior."""

    gen: GenerativeModel
    post: InferenceModel

    @classmethod
    def build(cls, data_dim: int, spec: PosteriorSpec, hidden=(64, 64), enc_hidden=None,
              likelihood="bernoulli", obs_sigma=1.0, prior=None):
        gen = GenerativeModel(spec.latent_dim, data_dim, list(hidden), likelihood, obs_sigma, prior)
        post = InferenceModel(spec, data_dim, list(hidden if enc_hidden is None else enc_hidden))
        return cls(gen, post)

    def init(self, rng: Rng):
        params = self.gen.init(rng.substream(0))
        params.update(self.post.init(rng.substream(1)))
        return params

    def phi_names(self, params) -> list[str]:
        return [k for k in params if k.startswith(("enc.", "iaf", "planar"))]

    def theta_names(self, params) -> list[str]:
        return [k for k in params if k.startswith(("dec.", "prior."))]
