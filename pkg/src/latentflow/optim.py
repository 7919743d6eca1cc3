"""First-order optimizers for *maximizing* an objective, plus early stopping.

Every update moves parameters along ``+grad``: the objective being climbed
is the ELBO, and there is deliberately no minimize/negate switch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMIZERS = ("sgd", "adam", "adamax")


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.t < 0:
            raise ValueError("step counter must be nonnegative")


def _check(params, grads):
    for k, p in params.items():
        if k not in grads:
            raise KeyError(f"no gradient for parameter {k!r}")
        if np.shape(grads[k]) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(grads[k])} != parameter shape "
                             f"{np.shape(p)} for {k!r}")


def sgd_step(state: OptimizerState, params, grads):
    _check(params, grads)
    state.t += 1
    return {k: p + state.lr * grads[k] for k, p in params.items()}


def adam_step(state: OptimizerState, params, grads):
    """Bias-corrected Adam ascent step."""
    _check(params, grads)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[k], state.v[k] = m, v
        out[k] = p + state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def adamax_step(state: OptimizerState, params, grads):
    """Adam variant with an infinity-norm second moment (``v`` holds ``u``)."""
    _check(params, grads)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m.get(k, np.zeros_like(p)) + (1.0 - b1) * g
        u = np.maximum(b2 * state.v.get(k, np.zeros_like(p)), np.abs(g))
        state.m[k], state.v[k] = m, u
        out[k] = p + (state.lr / c1) * m / (u + state.eps)
    return out


STEPS = {"sgd": sgd_step, "adam": adam_step, "adamax": adamax_step}


def step(state: OptimizerState, params, grads):
    return STEPS[state.kind](state, params, grads)


def early_stop_check(holdout_history, patience: int = 10) -> bool:
    """True once the best holdout value is more than ``patience`` evaluations old.

    Higher is better (holdout ELBO or log-likelihood).
    """
    if len(holdout_history) == 0:
        raise ValueError("holdout history is empty")
    best = int(np.argmax(np.asarray(holdout_history, dtype=np.float64)))
    return len(holdout_history) - 1 - best >= patience
