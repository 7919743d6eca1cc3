from __future__ import annotations

from typing import Callable

import numpy as np

from .tape import Tape, Var


class NonFiniteLoss(ValueError):
    pass


def autodiff_grads(loss_fn: Callable[[dict[str, Var]], Var], params: dict[str, np.ndarray]):
    tape = Tape()
    pv = tape.params_from(params)
    out = loss_fn(pv)
    val = float(np.asarray(out.value).reshape(()))
    if not np.isfinite(val):
        raise NonFiniteLoss(f"loss is {val}")
    return val, tape.backward(out)


def _scalar(loss_fn, params) -> float:
    out = loss_fn(params)
    val = float(np.asarray(out.value if isinstance(out, Var) else out).reshape(()))
    if not np.isfinite(val):
        raise NonFiniteLoss(f"loss is {val}")
    return val


def finite_difference_grads(loss_fn, params: dict[str, np.ndarray], fd_step: float = 1e-5):
    """Central differences for every parameter entry."""
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value, dtype=np.float64)
        flat = g.reshape(-1)
        for i in range(value.size):
            pert = dict(params)
            plus = value.astype(np.float64).copy().reshape(-1)
            minus = plus.copy()
            plus[i] += fd_step
            minus[i] -= fd_step
            pert[name] = plus.reshape(value.shape)
            fp = _scalar(loss_fn, pert)
            pert[name] = minus.reshape(value.shape)
            fm = _scalar(loss_fn, pert)
            flat[i] = (fp - fm) / (2.0 * fd_step)
        grads[name] = g
    return grads


def grad_check(loss_fn, params: dict[str, np.ndarray], fd_step: float = 1e-5, report: bool = False):
    """Largest ``|autodiff - fd| / max(1, |fd|)`` over all parameter entries.

    ``loss_fn`` must be deterministic and must accept either a dict of
    :class:`Var` (graph mode) or a dict of arrays (eager mode).  With
    ``report=True`` also returns ``(worst_param_name, worst_index)``.
    """
    _, ad = autodiff_grads(loss_fn, params)
    fd = finite_difference_grads(loss_fn, params, fd_step)
    worst, where = 0.0, (None, None)
    for name in params:
        err = np.abs(ad[name] - fd[name]) / np.maximum(1.0, np.abs(fd[name]))
        if err.size and err.max() > worst:
            worst = float(err.max())
            where = (name, np.unravel_index(int(err.argmax()), err.shape))
    if report:
        return worst, where
    return worst
