"""Parameterized function approximators: plain MLPs and MADE-style masked nets.

Networks are descriptions (layer widths, activations, masks); their weights
live in a flat ``dict[str, ndarray]`` keyed by ``"<prefix>.<tensor>"`` so a
whole model can be checkpointed, optimized and finite-differenced as one
mapping.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .ndtensor import Rng, ops

ACTIVATIONS = {
    "tanh": ops.tanh,
    "softplus": ops.softplus,
    "sigmoid": ops.sigmoid,
    "linear": lambda x: x,
}

S_BIAS_INIT = 2.0


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * rng.uniform((fan_in, fan_out)) - 1.0) * a


@dataclass
class Mlp:
    """Fully connected net ``widths[0] -> ... -> widths[-1]``.

    ``activations`` has one entry per weight layer; the default is tanh on
    hidden layers and linear on the output.
    """

    prefix: str
    widths: list[int]
    activations: list[str] | None = None

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        n = len(self.widths) - 1
        if self.activations is None:
            self.activations = ["tanh"] * (n - 1) + ["linear"]
        if len(self.activations) != n:
            raise ValueError(f"{n} layers but {len(self.activations)} activations")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def init(self, rng: Rng, zero_last: bool = False) -> dict[str, np.ndarray]:
        params = {}
        for i, (a, b) in enumerate(zip(self.widths, self.widths[1:])):
            last = i == self.n_layers - 1
            params[f"{self.prefix}.W{i}"] = np.zeros((a, b)) if (last and zero_last) else glorot_uniform(rng, a, b)
            params[f"{self.prefix}.b{i}"] = np.zeros(b)
        return params

    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths, self.widths[1:]))

    def __call__(self, params, x):
        if np.shape(ops.value_of(x))[-1] != self.widths[0]:
            raise ops.ShapeError(f"{self.prefix} input", None,
                                 [np.shape(ops.value_of(x)), (self.widths[0],)])
        h = x
        for i, act in enumerate(self.activations):
            h = ops.matmul(h, params[f"{self.prefix}.W{i}"]) + params[f"{self.prefix}.b{i}"]
            h = ACTIVATIONS[act](h)
        return h


def made_degrees(D: int, hidden: list[int], ordering) -> list[np.ndarray]:
    """Connectivity degrees: inputs get their rank in ``ordering`` (1..D),
    hidden units get deterministic evenly spaced degrees in ``[1, D-1]``."""
    ordering = np.asarray(ordering)
    if sorted(ordering.tolist()) != list(range(D)):
        raise ValueError(f"ordering must be a permutation of range({D})")
    deg_in = np.empty(D, dtype=np.int64)
    deg_in[ordering] = np.arange(1, D + 1)
    degrees = [deg_in]
    for H in hidden:
        if D < 2:
            degrees.append(np.zeros(H, dtype=np.int64))
        else:
            degrees.append(1 + (np.arange(H) * (D - 1)) // H)
    return degrees


def build_made_masks(widths: list[int], ordering, rng: Rng | None = None) -> list[np.ndarray]:
    """Binary masks, one per weight matrix, for a MADE with ``widths``.

    ``widths`` is ``[D, H1, ..., Hk, D]``; the final mask is for a single
    head of ``D`` outputs and is reused for both the ``m`` and ``s`` heads.
    Degrees are deterministic, so ``rng`` is accepted only for interface
    symmetry.
    """
    D = widths[0]
    if widths[-1] != D:
        raise ValueError("first and last widths must both equal the source dimension")
    if D < 2:
        warnings.warn("MADE with D < 2 has no autoregressive structure", stacklevel=2)
    degrees = made_degrees(D, list(widths[1:-1]), ordering)
    masks = []
    for d_prev, d_next in zip(degrees[:-1], degrees[1:]):
        masks.append((d_next[None, :] >= d_prev[:, None]).astype(np.float64))
    masks.append((degrees[0][None, :] > degrees[-1][:, None]).astype(np.float64))
    return masks


@dataclass
class MaskedNet:
    """Autoregressive net producing ``(m, s)``, each ``D`` wide.

    ``m_i`` and ``s_i`` depend only on inputs earlier than ``i`` in
    ``ordering`` and on the unmasked context ``h``, which enters every
    hidden layer and the output layer.  The output-layer path matters for
    the first element in the ordering, which no hidden unit may reach.
    """

    prefix: str
    dim: int
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    context_dim: int = 0
    ordering: list[int] | None = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.ordering is None:
            self.ordering = list(range(self.dim))
        self.masks = build_made_masks([self.dim, *self.hidden, self.dim], self.ordering)
        self.out_mask = np.concatenate([self.masks[-1], self.masks[-1]], axis=1)

    @property
    def widths(self) -> list[int]:
        return [self.dim, *self.hidden, 2 * self.dim]

    def init(self, rng: Rng, s_bias: float = S_BIAS_INIT) -> dict[str, np.ndarray]:
        p = {}
        w = self.widths
        for i, (a, b) in enumerate(zip(w, w[1:])):
            p[f"{self.prefix}.W{i}"] = glorot_uniform(rng, a, b)
            p[f"{self.prefix}.b{i}"] = np.zeros(b)
        for i in self._context_layers():
            p[f"{self.prefix}.V{i}"] = glorot_uniform(rng, self.context_dim, w[i + 1])
        last = len(w) - 2
        p[f"{self.prefix}.b{last}"][self.dim:] = s_bias
        return p

    def _context_layers(self) -> list[int]:
        if self.context_dim == 0:
            return []
        return list(range(len(self.hidden) + 1))

    def n_params(self) -> int:
        w = self.widths
        n = sum(a * b + b for a, b in zip(w, w[1:]))
        return n + sum(self.context_dim * w[i + 1] for i in self._context_layers())

    def layer_masks(self) -> list[np.ndarray]:
        return self.masks[:-1] + [self.out_mask]

    def __call__(self, params, z, h=None):
        return made_forward(self, params, z, h)


def made_forward(net: MaskedNet, params, z, h=None):
    """Return ``(m, s)`` for input ``z`` and optional context ``h``."""
    masks = net.layer_masks()
    ctx = set(net._context_layers())
    if ctx and h is None:
        raise ValueError(f"{net.prefix}: context of width {net.context_dim} required")
    act = ACTIVATIONS[net.activation]
    a = z
    n = len(masks)
    for i, mask in enumerate(masks):
        a = ops.matmul(a, params[f"{net.prefix}.W{i}"] * mask) + params[f"{net.prefix}.b{i}"]
        if i in ctx:
            a = a + ops.matmul(h, params[f"{net.prefix}.V{i}"])
        if i < n - 1:
            a = act(a)
    D = net.dim
    return a[..., :D], a[..., D:]
