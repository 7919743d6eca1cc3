"""AEVB training loop: minibatch, fresh noise, estimator, backward, ascent step."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import optim
from ..ndtensor import Rng, Tape
from .elbo import (
    ConfigurationError,
    NonFiniteElbo,
    anneal_beta,
    elbo_estimate,
    free_bits_objective,
    kl_annealed_elbo,
)
from .model import Vae

log = logging.getLogger(__name__)

STREAM_INIT = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3

METRIC_FIELDS = ("step", "elbo", "logpx", "logpz", "logqz", "kl_est", "grad_norm", "beta")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    free_bits: float | None = None
    free_bits_groups: int = 1
    anneal_steps: int = 0
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    iwae_samples: int = 100
    eval_every: int = 0
    patience: int = 10
    max_abs_elbo: float = 1e6

    def validate(self, latent_dim: int | None = None):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigurationError("steps must be >= 0 and batch_size >= 1")
        if self.free_bits is not None and self.free_bits < 0:
            raise ConfigurationError("free_bits must be >= 0")
        if self.iwae_samples < 1:
            raise ConfigurationError("iwae_samples must be >= 1")
        if self.optimizer not in optim.OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if latent_dim is not None:
            K = self.free_bits_groups
            if not 1 <= K <= latent_dim or latent_dim % K:
                raise ConfigurationError(
                    f"free_bits_groups={K} must lie in [1, {latent_dim}] and divide latent_dim")


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, params, opt_state, history, detail=""):
        super().__init__(f"training diverged at step {step}{': ' + detail if detail else ''}")
        self.step = step
        self.params = params
        self.opt_state = opt_state
        self.history = history


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    opt_state: optim.OptimizerState
    step: int
    history: list[dict] = field(default_factory=list)
    holdout_history: list[float] = field(default_factory=list)
    stopped_early: bool = False


def init_params(vae: Vae, seed: int):
    return vae.init(Rng(seed).substream(STREAM_INIT))


def _objective(x, vae, pv, config: TrainConfig, beta, eps):
    if config.free_bits is not None:
        return free_bits_objective(x, vae, pv, config.free_bits, config.free_bits_groups, eps=eps)
    return kl_annealed_elbo(x, vae, pv, beta, eps=eps)


def holdout_elbo(data, vae: Vae, params, seed: int) -> float:
    eps = Rng(seed).substream(STREAM_EVAL).normal((data.shape[0], vae.post.spec.latent_dim))
    r = elbo_estimate(data, vae, params, eps=eps)
    return float(np.mean(r.elbo))


def train_aevb(data, vae: Vae, config: TrainConfig, params=None, opt_state=None,
               start_step: int = 0, holdout=None, holdout_history=None) -> TrainResult:
    """Maximize the (possibly free-bits or annealed) ELBO on ``data``.

    The noise and minibatch of step ``s`` come from substream
    ``(seed, STREAM_TRAIN, s)``, so a run resumed at step ``s`` from saved
    parameters and optimizer state continues bit-identically.
    """
    data = np.asarray(data, dtype=np.float64)
    D = vae.post.spec.latent_dim
    config.validate(D)
    if params is None:
        params = init_params(vae, config.seed)
    if opt_state is None:
        opt_state = optim.OptimizerState(kind=config.optimizer, lr=config.lr)
    N = data.shape[0]
    B = min(config.batch_size, N)
    root = Rng(config.seed)
    history: list[dict] = []
    hold_hist = list(holdout_history or [])
    stopped = False
    step = start_step
    for step in range(start_step, config.steps):
        r = root.substream(STREAM_TRAIN, step)
        idx = r.substream(0).permutation(N)[:B]
        eps = r.substream(1).normal((B, D))
        x = data[idx]
        beta = anneal_beta(step, config.anneal_steps)
        tape = Tape()
        pv = tape.params_from(params)
        try:
            obj, rep = _objective(x, vae, pv, config, beta, eps)
        except NonFiniteElbo as exc:
            raise TrainingDiverged(step, params, opt_state, history, str(exc)) from exc
        summary = rep.summary()
        if not np.isfinite(obj.value) or abs(summary["elbo"]) > config.max_abs_elbo:
            raise TrainingDiverged(step, params, opt_state, history,
                                   f"objective={float(obj.value)}, elbo={summary['elbo']}")
        grads = tape.backward(obj)
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        if not np.isfinite(gnorm):
            raise TrainingDiverged(step, params, opt_state, history, "non-finite gradient")
        params = optim.step(opt_state, params, grads)
        history.append({"step": step + 1, **summary, "grad_norm": gnorm, "beta": beta})
        if holdout is not None and config.eval_every and (step + 1) % config.eval_every == 0:
            hold_hist.append(holdout_elbo(holdout, vae, params, config.seed))
            log.debug("step %d holdout elbo %.4f", step + 1, hold_hist[-1])
            if optim.early_stop_check(hold_hist, config.patience):
                stopped = True
                step += 1
                break
    else:
        step = config.steps
    return TrainResult(params, opt_state, max(step, start_step), history, hold_hist, stopped)

