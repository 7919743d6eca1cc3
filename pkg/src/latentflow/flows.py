"""Posterior families built from change of variables.

Every family starts from ``eps0 ~ N(0, I)`` and returns a sample ``z`` with
its exact ``log q(z|x)``:

* ``diag``    ``z = mu + sigma * eps0``
* ``fullcov`` ``z = mu + L eps0`` with ``L`` masked lower-triangular
* ``planar``  diagonal base followed by ``T`` planar steps
* ``iaf``     diagonal base followed by ``T`` gated inverse autoregressive steps
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from .ndtensor import Rng, ops
from .ndtensor.tape import value_of
from .networks import MaskedNet, Mlp, glorot_uniform

KINDS = ("diag", "fullcov", "planar", "iaf")


@dataclass
class PosteriorSpec:
    kind: str = "diag"
    latent_dim: int = 2
    steps: int = 1
    context_dim: int = 0
    made_hidden: list[int] = field(default_factory=lambda: [64, 64])
    gated: bool = True
    reverse: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown posterior kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("planar", "iaf") and self.steps < 1:
            raise ValueError(f"{self.kind} posterior needs steps >= 1, got {self.steps}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")

    @property
    def head_widths(self) -> dict[str, int]:
        D = self.latent_dim
        heads = {"mu": D, "log_sigma": D}
        if self.kind == "iaf" and self.context_dim:
            heads["h"] = self.context_dim
        if self.kind == "fullcov":
            heads["L_raw"] = D * D
        return heads


@dataclass
class FlowResult:
    z: object
    log_q: object
    logdets: list = field(default_factory=list)
    eps0: object = None
    mu: object = None
    log_sigma: object = None


# --- planar ----------------------------------------------------------------

def planar_u_hat(u, w):
    """Correct ``u`` so that ``w . u_hat >= -1`` (keeps the step invertible)."""
    wu = ops.sum(w * u, axis=-1, keepdims=True)
    ww = ops.sum(w * w, axis=-1, keepdims=True) + 1e-12
    return u + (ops.softplus(wu) - 1.0 - wu) * w / ww


def planar_step(eps, u, w, b):
    """One planar step on a batch ``eps`` of shape ``(..., D)``.

    Returns ``(eps_next, logdet)`` where ``logdet = log|1 + u_hat . psi|``
    and ``psi = tanh'(w . eps + b) w``.
    """
    u_hat = planar_u_hat(u, w)
    a = ops.sum(eps * w, axis=-1, keepdims=True) + b
    t = ops.tanh(a)
    eps_next = eps + u_hat * t
    dt = 1.0 - ops.square(t)
    det = 1.0 + dt * ops.sum(w * u_hat, axis=-1, keepdims=True)
    logdet = ops.sum(ops.log(det), axis=-1)
    return eps_next, logdet


# --- inverse autoregressive ------------------------------------------------

def iaf_step(eps_prev, h, net: MaskedNet, params, gated: bool = True):
    """One inverse autoregressive step.

    Gated: ``sigma = sigmoid(s)``, ``eps = sigma*eps_prev + (1-sigma)*m``.
    Raw:   ``sigma = exp(s)``,     ``eps = m + sigma*eps_prev``.
    The returned contribution is ``sum_i log sigma_i``; it is subtracted
    from the running ``log q``.
    """
    m, s = net(params, eps_prev, h)
    if gated:
        sig = ops.sigmoid(s)
        eps = sig * eps_prev + (1.0 - sig) * m
        log_sig = ops.log(sig)
    else:
        log_sig = dist.clamp_log_sigma(s)
        eps = m + ops.exp(log_sig) * eps_prev
    return eps, ops.sum(log_sig, axis=-1)


def reverse_ordering(eps):
    return eps[..., ::-1]


# --- inference model --------------------------------------------------------

@dataclass
class InferenceModel:
    """Amortized posterior: encoder MLP plus the family-specific flow."""

    spec: PosteriorSpec
    input_dim: int
    hidden: list[int] = field(default_factory=lambda: [64, 64])

    def __post_init__(self):
        heads = self.spec.head_widths
        self.encoder = Mlp("enc", [self.input_dim, *self.hidden, sum(heads.values())])
        self.nets = []
        if self.spec.kind == "iaf":
            self.nets = [
                MaskedNet(f"iaf{t}", self.spec.latent_dim, list(self.spec.made_hidden),
                          self.spec.context_dim)
                for t in range(self.spec.steps)
            ]

    def init(self, rng: Rng) -> dict[str, np.ndarray]:
        params = self.encoder.init(rng.substream(0))
        D = self.spec.latent_dim
        if self.spec.kind == "planar":
            r = rng.substream(1)
            for t in range(self.spec.steps):
                params[f"planar{t}.u"] = glorot_uniform(r, 1, D)[0]
                params[f"planar{t}.w"] = glorot_uniform(r, 1, D)[0]
                params[f"planar{t}.b"] = np.zeros(1)
        for t, net in enumerate(self.nets):
            params.update(net.init(rng.substream(2, t)))
        return params

    def encode(self, params, x) -> dict:
        out = self.encoder(params, x)
        heads, start = {}, 0
        for name, width in self.spec.head_widths.items():
            heads[name] = out[..., start:start + width]
            start += width
        heads["log_sigma"] = dist.clamp_log_sigma(heads["log_sigma"])
        return heads

    def sample_and_logq(self, params, x, rng: Rng | None = None, eps=None) -> FlowResult:
        return posterior_sample_and_logq(self, x, params, rng=rng, eps=eps)


def _base_noise(x, D, rng, eps):
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps must be given")
        eps = rng.normal(np.shape(value_of(x))[:-1] + (D,))
    return eps


def iaf_chain(z, log_q, h, nets, params, gated=True, reverse=True):
    logdets = []
    for t, net in enumerate(nets):
        if reverse and t > 0:
            z = reverse_ordering(z)
        z, ld = iaf_step(z, h, net, params, gated)
        log_q = log_q - ld
        logdets.append(ld)
    return z, log_q, logdets


def iaf_sample_and_logq(model: InferenceModel, x, params, rng=None, eps=None) -> FlowResult:
    heads = model.encode(params, x)
    eps = _base_noise(x, model.spec.latent_dim, rng, eps)
    mu, log_sigma = heads["mu"], heads["log_sigma"]
    z = mu + ops.exp(log_sigma) * eps
    log_q = dist.standard_normal_logprob(eps) - ops.sum(log_sigma, axis=-1)
    z, log_q, logdets = iaf_chain(z, log_q, heads.get("h"), model.nets, params,
                                  model.spec.gated, model.spec.reverse)
    return FlowResult(z, log_q, logdets, eps, mu, log_sigma)


def posterior_sample_and_logq(model: InferenceModel, x, params, rng=None, eps=None) -> FlowResult:
    spec = model.spec
    kind = spec.kind
    if kind == "iaf":
        return iaf_sample_and_logq(model, x, params, rng, eps)
    if kind not in KINDS:
        raise ValueError(f"unknown posterior kind {kind!r}")
    heads = model.encode(params, x)
    eps = _base_noise(x, spec.latent_dim, rng, eps)
    mu, log_sigma = heads["mu"], heads["log_sigma"]
    if kind == "fullcov":
        D = spec.latent_dim
        shape = np.shape(value_of(x))[:-1] + (D, D)
        L = dist.build_masked_L(ops.reshape(heads["L_raw"], shape), ops.exp(log_sigma))
        z, log_q = dist.fullcov_sample_and_logprob(dist.FullCovGaussian(mu, L), eps)
        return FlowResult(z, log_q, [], eps, mu, log_sigma)
    q = dist.DiagGaussian(mu, log_sigma)
    z = q.rsample(eps)
    log_q = dist.standard_normal_logprob(eps) - ops.sum(log_sigma, axis=-1)
    logdets = []
    if kind == "planar":
        for t in range(spec.steps):
            z, ld = planar_step(z, params[f"planar{t}.u"], params[f"planar{t}.w"],
                                params[f"planar{t}.b"])
            log_q = log_q - ld
            logdets.append(ld)
    return FlowResult(z, log_q, logdets, eps, mu, log_sigma)
