import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentflow.ndtensor import (
    GradientError,
    NonFiniteLoss,
    Rng,
    ShapeError,
    Tape,
    grad_check,
    ops,
    sample_standard_normal,
)
from latentflow.networks import Mlp

GOLDEN = json.loads((Path(__file__).parent / "golden" / "ndtensor.json").read_text())


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_matmul_example():
    out = ops.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[1.0], [1]]))
    np.testing.assert_array_equal(out, [[3.0], [7.0]])


def test_sigmoid_at_zero():
    assert ops.sigmoid(0.0) == 0.5


def test_product_rule():
    t = Tape()
    x, y = t.param("x", 3.0), t.param("y", 5.0)
    g = t.backward(x * y)
    assert g["x"] == 5.0 and g["y"] == 3.0


def test_sigmoid_derivative_at_zero():
    t = Tape()
    x = t.param("t", 0.0)
    assert t.backward(ops.sigmoid(x))["t"] == 0.25


def test_fan_out_accumulates():
    t = Tape()
    x = t.param("x", 2.0)
    y = x * x + x * 3.0 + ops.exp(x)
    assert np.isclose(t.backward(y)["x"], 2 * 2.0 + 3.0 + np.exp(2.0))


def test_backward_requires_scalar():
    t = Tape()
    x = t.param("x", np.ones(3))
    with pytest.raises(GradientError):
        t.backward(x * 2.0)


def test_shape_error_names_node():
    t = Tape()
    a = t.param("a", np.ones((2, 3)))
    b = t.param("b", np.ones((2, 3)))
    with pytest.raises(ShapeError, match=r"node \d+ \(matmul\)"):
        ops.matmul(a, b)


def test_unused_parameter_gets_zero_gradient():
    t = Tape()
    x = t.param("x", 1.0)
    t.param("unused", np.ones(2))
    g = t.backward(x * 2.0)
    np.testing.assert_array_equal(g["unused"], np.zeros(2))


UNARY = {
    "exp": (ops.exp, np.exp, (-2, 2)),
    "log": (ops.log, np.log, (0.2, 3)),
    "sigmoid": (ops.sigmoid, lambda x: 1 / (1 + np.exp(-x)), (-4, 4)),
    "tanh": (ops.tanh, np.tanh, (-3, 3)),
    "softplus": (ops.softplus, lambda x: np.log1p(np.exp(x)), (-4, 4)),
    "neg": (ops.neg, np.negative, (-2, 2)),
    "square": (ops.square, np.square, (-2, 2)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name):
    op, ref, (lo, hi) = UNARY[name]
    rng = np.random.default_rng(0)
    x0 = rng.uniform(lo, hi, size=(3, 4))
    w = rng.normal(size=(3, 4))
    np.testing.assert_allclose(op(x0), ref(x0), rtol=1e-13, atol=1e-14)
    t = Tape()
    g = t.backward(ops.sum(op(t.param("x", x0)) * w))["x"]
    fd = central_diff(lambda x: float(np.sum(ref(x) * w)), x0)
    assert np.max(np.abs(g - fd) / np.maximum(1, np.abs(fd))) < 1e-7


BINARY = {
    "add": (ops.add, np.add),
    "sub": (ops.sub, np.subtract),
    "mul": (ops.mul, np.multiply),
    "div": (ops.div, np.divide),
    "maximum": (ops.maximum, np.maximum),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("shape_b", [(3, 4), (4,), (3, 1), ()])
def test_binary_primitive_gradients_with_broadcasting(name, shape_b):
    op, ref = BINARY[name]
    rng = np.random.default_rng(1)
    a0 = rng.uniform(0.5, 2, size=(3, 4))
    b0 = rng.uniform(0.5, 2, size=shape_b) + 0.013  # avoid exact ties for maximum
    w = rng.normal(size=(3, 4))
    t = Tape()
    g = t.backward(ops.sum(op(t.param("a", a0), t.param("b", b0)) * w))
    fa = central_diff(lambda a: float(np.sum(ref(a, b0) * w)), a0)
    fb = central_diff(lambda b: float(np.sum(ref(a0, b) * w)), b0)
    assert g["b"].shape == np.shape(b0)
    assert np.max(np.abs(g["a"] - fa)) < 1e-7
    assert np.max(np.abs(g["b"] - fb)) < 1e-7


def _structural_cases():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(2, 3, 4))
    B = rng.normal(size=(4, 2))
    C = rng.normal(size=(2, 4, 3))
    return {
        "matmul": (lambda x: ops.matmul(x, B), A),
        "batched_matmul": (lambda x: ops.matmul(x, C), A),
        "sum_axis": (lambda x: ops.sum(x, axis=1), A),
        "sum_keepdims": (lambda x: ops.sum(x, axis=-1, keepdims=True), A),
        "mean": (lambda x: ops.mean(x, axis=0), A),
        "slice": (lambda x: x[:, 1:, ::-1], A),
        "concat": (lambda x: ops.concat([x, x * 2.0], axis=-1), A),
        "reshape": (lambda x: ops.reshape(x, (6, 4)), A),
        "transpose": (lambda x: ops.transpose(x, (2, 0, 1)), A),
        "clip": (lambda x: ops.clip(x, -0.5, 0.5), A + 0.001),
    }


@pytest.mark.parametrize("name", sorted(_structural_cases()))
def test_structural_primitive_gradients(name):
    fn, x0 = _structural_cases()[name]
    out0 = fn(x0)
    w = np.random.default_rng(3).normal(size=np.shape(out0))
    t = Tape()
    g = t.backward(ops.sum(fn(t.param("x", x0)) * w))["x"]
    fd = central_diff(lambda x: float(np.sum(fn(x) * w)), x0)
    assert np.max(np.abs(g - fd) / np.maximum(1, np.abs(fd))) < 1e-7


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_of_sum_is_sum_of_gradients(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=5)
    W = rng.normal(size=(5, 5))

    def f(x):
        return ops.sum(ops.tanh(ops.matmul(ops.reshape(x, (1, 5)), W)))

    def g(x):
        return ops.sum(ops.softplus(x) * ops.exp(x * 0.3))

    def grad(fn):
        t = Tape()
        return t.backward(fn(t.param("x", x0)))["x"]

    np.testing.assert_allclose(grad(lambda x: f(x) + g(x)), grad(f) + grad(g), rtol=1e-12, atol=1e-12)


def test_replay_is_bit_exact():
    t = Tape()
    x = t.param("x", np.random.default_rng(4).normal(size=(3, 3)))
    y = ops.sum(ops.softplus(ops.matmul(x, x)) * ops.sigmoid(x))
    values = t.replay()
    assert values[y.idx].tobytes() == y.value.tobytes()
    assert t.replay()[y.idx].tobytes() == values[y.idx].tobytes()


def test_replay_with_new_inputs_matches_eager():
    t = Tape()
    x = t.param("x", np.ones(3))
    y = ops.sum(ops.exp(x) * 2.0)
    new = np.array([0.1, 0.2, 0.3])
    assert t.replay({"x": new})[y.idx] == ops.sum(ops.exp(new) * 2.0)


def test_nodes_reference_earlier_nodes_only():
    t = Tape()
    x = t.param("x", np.ones(2))
    ops.sum(ops.tanh(x) * x + 1.0)
    for i, node in enumerate(t.nodes):
        assert all(j < i for j in node.inputs)


def test_grad_check_quadratic():
    params = {"theta": np.array([0.3, -1.2, 2.5]), "b": np.array([[1.0, -0.5]])}

    def loss(p):
        return 0.5 * (ops.sum(ops.square(p["theta"])) + ops.sum(ops.square(p["b"])))

    assert grad_check(loss, params) < 1e-9


def test_grad_check_rejects_nonfinite():
    with pytest.raises(NonFiniteLoss):
        grad_check(lambda p: ops.sum(p["x"] / 0.0), {"x": np.ones(2)})


def test_log_clamps_input():
    assert ops.log(0.0) == np.log(1e-12)


def test_sigmoid_extremes_are_finite():
    out = ops.sigmoid(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0


# --- rng -------------------------------------------------------------------

def test_seed_42_golden_first_sample():
    np.testing.assert_array_equal(sample_standard_normal(Rng(42), (8,)), GOLDEN["normal_seed42_first8"])


def test_identical_seed_identical_sequence():
    a, b = Rng(7), Rng(7)
    np.testing.assert_array_equal(a.normal((100,)), b.normal((100,)))
    np.testing.assert_array_equal(a.uniform((10,)), b.uniform((10,)))


def test_substreams_differ_and_reproduce():
    r = Rng(3)
    s1, s2 = r.substream(1).normal((50,)), r.substream(2).normal((50,))
    assert not np.array_equal(s1, s2)
    np.testing.assert_array_equal(s1, Rng(3, (1,)).normal((50,)))


def test_longer_draw_extends_shorter():
    np.testing.assert_array_equal(Rng(5).normal((6,)), Rng(5).normal((20,))[:6])


def test_rng_state_restores_stream():
    r = Rng(9, (4,))
    r.normal((13,))
    resumed = Rng.from_state(r.state)
    np.testing.assert_array_equal(r.uniform((5,)), resumed.uniform((5,)))


def test_uniform_open_interval():
    u = Rng(0).uniform((100_000,))
    assert u.min() > 0.0 and u.max() < 1.0


@pytest.mark.slow
def test_normal_moments_million_samples():
    z = Rng(2024).normal((1_000_000,))
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01


# --- golden MLP --------------------------------------------------------------

def test_mlp_forward_matches_golden():
    mlp = Mlp("m", [3, 5, 4, 2], ["tanh", "softplus", "sigmoid"])
    params = mlp.init(Rng(7))
    for k, v in GOLDEN["mlp_params"].items():
        np.testing.assert_array_equal(params[k], v)
    x = np.array(GOLDEN["mlp_input"])
    np.testing.assert_allclose(mlp(params, x), GOLDEN["mlp_output"], rtol=1e-14, atol=1e-15)
    t = Tape()
    out = mlp(t.params_from(params), x)
    np.testing.assert_allclose(out.value, GOLDEN["mlp_output"], rtol=1e-14, atol=1e-15)
