"""Tape-based reverse-mode automatic differentiation over numpy float64 arrays.

Every primitive is registered twice: a forward rule (``FORWARD``) mapping
input values to an output value, and a vector-Jacobian rule (``BACKWARD``)
mapping the output cotangent to one cotangent per input.  When none of the
inputs of a primitive is a :class:`Var` the forward rule runs eagerly and a
plain ``ndarray`` comes back, so the same model code serves both for
differentiable graphs and for cheap numeric evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when a primitive receives operands it cannot combine."""

    def __init__(self, op: str, node: int | None, shapes, detail: str = ""):
        where = f"node {node} ({op})" if node is not None else op
        msg = f"shape mismatch at {where}: operand shapes {list(shapes)}"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)
        self.op = op
        self.node = node
        self.shapes = list(shapes)


class GradientError(ValueError):
    pass


def _sigmoid(x):
    # branch-free and overflow-free
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"inner dimensions {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def _matmul_vjp(g, a, b, out):
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _sum_fwd(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims)


def _sum_vjp(g, x, out, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _mean_fwd(x, axis=None, keepdims=False):
    return np.mean(x, axis=axis, keepdims=keepdims)


def _mean_vjp(g, x, out, axis=None, keepdims=False):
    (gs,) = _sum_vjp(g, x, out, axis=axis, keepdims=keepdims)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return (gs / n,)


def _slice_vjp(g, x, out, index=None):
    gx = np.zeros_like(x)
    np.add.at(gx, index, g)
    return (gx,)


def _concat_vjp(g, *args, axis=0):
    vals, _out = args[:-1], args[-1]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _transpose_vjp(g, x, out, axes=None):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def _clip_vjp(g, x, out, lo=None, hi=None):
    inside = np.ones_like(x, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return (g * inside,)


def _maximum_vjp(g, a, b, out):
    pick_a = a >= b
    return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)


FORWARD: dict[str, Callable[..., np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "neg": np.negative,
    "matmul": _matmul,
    "exp": np.exp,
    "log": lambda x: np.log(np.maximum(x, LOG_FLOOR)),
    "sigmoid": _sigmoid,
    "tanh": np.tanh,
    "softplus": _softplus,
    "sum": _sum_fwd,
    "mean": _mean_fwd,
    "slice": lambda x, index=None: x[index],
    "concat": lambda *xs, axis=0: np.concatenate(xs, axis=axis),
    "reshape": lambda x, shape=None: np.reshape(x, shape),
    "transpose": lambda x, axes=None: np.transpose(x, axes),
    "clip": lambda x, lo=None, hi=None: np.clip(x, lo, hi),
    "maximum": np.maximum,
}

# Each rule receives (cotangent, *input_values, output_value, **attrs).
BACKWARD: dict[str, Callable[..., tuple]] = {
    "add": lambda g, a, b, out: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    "sub": lambda g, a, b, out: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    "mul": lambda g, a, b, out: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
    "div": lambda g, a, b, out: (_unbroadcast(g / b, a.shape),
                                 _unbroadcast(-g * a / (b * b), b.shape)),
    "neg": lambda g, x, out: (-g,),
    "matmul": _matmul_vjp,
    "exp": lambda g, x, out: (g * out,),
    "log": lambda g, x, out: (np.where(x > LOG_FLOOR, g / np.maximum(x, LOG_FLOOR), 0.0),),
    "sigmoid": lambda g, x, out: (g * out * (1.0 - out),),
    "tanh": lambda g, x, out: (g * (1.0 - out * out),),
    "softplus": lambda g, x, out: (g * _sigmoid(x),),
    "sum": _sum_vjp,
    "mean": _mean_vjp,
    "slice": _slice_vjp,
    "concat": _concat_vjp,
    "reshape": lambda g, x, out, shape=None: (np.reshape(g, x.shape),),
    "transpose": _transpose_vjp,
    "clip": _clip_vjp,
    "maximum": _maximum_vjp,
}


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any]
    value: np.ndarray
    name: str | None = None


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "idx")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        node = self.tape.nodes[self.idx]
        return f"Var(#{self.idx} {node.op}, shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, index):
        return getitem(self, index)


@dataclass
class Tape:
    """Ordered record of a computation.

    Leaves are either registered parameters (``param``) or constants.
    Node inputs always point at earlier nodes, so the node list is already
    a topological order and ``backward`` is a single reverse sweep.
    """

    nodes: list[Node] = field(default_factory=list)
    params: dict[str, int] = field(default_factory=dict)

    def _push(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64)
        v = self._push(Node("param", (), {}, arr, name=name))
        self.params[name] = v.idx
        return v

    def params_from(self, values: dict[str, np.ndarray]) -> dict[str, Var]:
        return {k: self.param(k, v) for k, v in values.items()}

    def const(self, value) -> Var:
        return self._push(Node("const", (), {}, np.asarray(value, dtype=np.float64)))

    def record(self, op: str, args: tuple, attrs: dict) -> Var:
        ids = []
        vals = []
        for a in args:
            if isinstance(a, Var):
                if a.tape is not self:
                    raise ValueError(f"{op}: operand recorded on a different tape")
                ids.append(a.idx)
                vals.append(a.value)
            else:
                c = self.const(a)
                ids.append(c.idx)
                vals.append(c.value)
        out = _evaluate(op, vals, attrs, node=len(self.nodes))
        return self._push(Node(op, tuple(ids), attrs, out))

    def backward(self, out: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
        """Gradients of scalar ``out`` w.r.t. every registered parameter."""
        if out.tape is not self:
            raise ValueError("output belongs to a different tape")
        if out.value.size != 1:
            raise GradientError(f"backward needs a scalar output, got shape {out.shape}")
        grads: dict[int, np.ndarray] = {out.idx: np.full(out.shape, seed, dtype=np.float64)}
        leaf_grads: dict[int, np.ndarray] = {}
        for i in range(out.idx, -1, -1):
            g = grads.pop(i, None)
            if g is None:
                continue
            node = self.nodes[i]
            if node.op == "param":
                leaf_grads[i] = g
                continue
            if node.op == "const":
                continue
            in_vals = [self.nodes[j].value for j in node.inputs]
            parts = BACKWARD[node.op](g, *in_vals, node.value, **node.attrs)
            for j, gj in zip(node.inputs, parts):
                if self.nodes[j].op == "const":
                    continue
                if j in grads:
                    grads[j] = grads[j] + gj
                else:
                    grads[j] = gj
        return {
            name: leaf_grads.get(idx, np.zeros_like(self.nodes[idx].value))
            for name, idx in self.params.items()
        }

    def grad_wrt(self, out: Var, leaves: list[Var]) -> list[np.ndarray]:
        """Gradients of scalar ``out`` w.r.t. arbitrary recorded nodes.

        Only parameter leaves are tracked by ``backward``; to differentiate
        w.r.t. an intermediate, register it as a parameter first.
        """
        g = self.backward(out)
        rev = {idx: name for name, idx in self.params.items()}
        return [g[rev[v.idx]] for v in leaves]

    def replay(self, overrides: dict[str, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every node from the leaves, optionally with new parameter values."""
        overrides = overrides or {}
        values: list[np.ndarray] = []
        for i, node in enumerate(self.nodes):
            if node.op == "param":
                values.append(np.asarray(overrides.get(node.name, node.value), dtype=np.float64))
            elif node.op == "const":
                values.append(node.value)
            else:
                values.append(_evaluate(node.op, [values[j] for j in node.inputs], node.attrs, i))
        return values


def _evaluate(op: str, vals: list, attrs: dict, node: int | None):
    try:
        with np.errstate(over="ignore"):
            out = FORWARD[op](*vals, **attrs)
    except (ValueError, IndexError) as exc:
        raise ShapeError(op, node, [np.shape(v) for v in vals], str(exc)) from None
    return np.asarray(out, dtype=np.float64)


def _apply(op: str, *args, **attrs):
    tape = next((a.tape for a in args if isinstance(a, Var)), None)
    if tape is None:
        vals = [np.asarray(a, dtype=np.float64) for a in args]
        return _evaluate(op, vals, attrs, node=None)
    return tape.record(op, args, attrs)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# --- primitives -----------------------------------------------------------

def add(a, b):
    return _apply("add", a, b)


def sub(a, b):
    return _apply("sub", a, b)


def mul(a, b):
    return _apply("mul", a, b)


def div(a, b):
    return _apply("div", a, b)


def neg(x):
    return _apply("neg", x)


def matmul(a, b):
    return _apply("matmul", a, b)


def exp(x):
    return _apply("exp", x)


def log(x):
    """Natural log with the input clamped at ``LOG_FLOOR``."""
    return _apply("log", x)


def sigmoid(x):
    return _apply("sigmoid", x)


def tanh(x):
    return _apply("tanh", x)


def softplus(x):
    return _apply("softplus", x)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return _apply("sum", x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return _apply("mean", x, axis=axis, keepdims=keepdims)


def getitem(x, index):
    return _apply("slice", x, index=index)


def concat(xs, axis=0):
    return _apply("concat", *xs, axis=axis)


def reshape(x, shape):
    return _apply("reshape", x, shape=tuple(shape))


def transpose(x, axes=None):
    return _apply("transpose", x, axes=None if axes is None else tuple(axes))


def clip(x, lo=None, hi=None):
    """Clamp values; the gradient passes only where the input is inside the bounds."""
    return _apply("clip", x, lo=lo, hi=hi)


def maximum(a, b):
    return _apply("maximum", a, b)


def square(x):
    return mul(x, x)
