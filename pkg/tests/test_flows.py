import math

import numpy as np
import pytest
from scipy import stats

from latentflow import distributions as dist
from latentflow.flows import (
    InferenceModel,
    PosteriorSpec,
    iaf_chain,
    iaf_step,
    planar_step,
    planar_u_hat,
    posterior_sample_and_logq,
    reverse_ordering,
)
from latentflow.ndtensor import Rng
from latentflow.networks import MaskedNet


def num_jacobian(f, x, h=1e-5):
    cols = []
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((f(xp) - f(xm)) / (2 * h))
    return np.stack(cols, axis=1)


def jitter(params, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return {k: v + scale * rng.normal(size=v.shape) for k, v in params.items()}


def make_model(kind, D, steps=2, ctx=3, seed=0, input_dim=5, hidden=(7,)):
    spec = PosteriorSpec(kind, D, steps, context_dim=ctx if kind == "iaf" else 0, made_hidden=[9])
    model = InferenceModel(spec, input_dim, list(hidden))
    return model, jitter(model.init(Rng(seed)), seed)


def change_of_variables_logq(model, params, x, eps):
    """log N(eps) - log|det dz/deps| with a central-difference Jacobian."""
    def f(e):
        return posterior_sample_and_logq(model, x[None], params, eps=e[None]).z[0]
    _, logdet = np.linalg.slogdet(num_jacobian(f, eps))
    return dist.standard_normal_logprob(eps) - logdet


# --- planar -----------------------------------------------------------------

def test_planar_zero_update_is_identity():
    # the correction maps u = log(e - 1) w / |w|^2 to u_hat = 0
    eps = np.array([[0.3, -1.0, 2.0]])
    w = np.array([1.0, 2.0, -1.0])
    u = math.log(math.e - 1) * w / (w @ w)
    np.testing.assert_allclose(planar_u_hat(u, w), 0.0, atol=1e-12)
    out, ld = planar_step(eps, u, w, np.array([0.4]))
    np.testing.assert_allclose(out, eps, atol=1e-12)
    np.testing.assert_allclose(ld, 0.0, atol=1e-12)


def test_planar_zero_w_is_shift():
    eps = np.array([[0.3, -1.0]])
    u = np.array([0.5, -0.2])
    out, ld = planar_step(eps, u, np.zeros(2), np.array([0.7]))
    np.testing.assert_allclose(out, eps + planar_u_hat(u, np.zeros(2)) * math.tanh(0.7))
    assert ld[0] == 0.0


def test_planar_u_hat_invertibility():
    rng = np.random.default_rng(0)
    for _ in range(100):
        u, w = rng.normal(size=(2, 4)) * 3
        assert w @ planar_u_hat(u, w) >= -1 - 1e-12


@pytest.mark.parametrize("D", [1, 2, 3, 5])
def test_planar_logdet_matches_dense_jacobian(D):
    rng = np.random.default_rng(D)
    for _ in range(5):
        u, w = rng.normal(size=(2, D))
        b = rng.normal(size=1)
        eps = rng.normal(size=D)
        _, ld = planar_step(eps[None], u, w, b)
        J = num_jacobian(lambda e: planar_step(e[None], u, w, b)[0][0], eps)
        ref = np.linalg.slogdet(J)[1]
        assert abs(ld[0] - ref) / max(1.0, abs(ref)) < 1e-6


# --- iaf --------------------------------------------------------------------

def zeroed_net(D, s_bias):
    net = MaskedNet("n", D, [4])
    params = {k: np.zeros_like(v) for k, v in net.init(Rng(0)).items()}
    params["n.b1"][D:] = s_bias
    return net, params


def test_iaf_large_s_is_identity():
    net, params = zeroed_net(3, 40.0)
    eps = np.array([[0.5, -1.0, 2.0]])
    out, ld = iaf_step(eps, None, net, params)
    np.testing.assert_allclose(out, eps, atol=1e-15)
    assert abs(ld[0]) < 1e-15


def test_iaf_half_gate():
    net, params = zeroed_net(3, 0.0)
    params["n.b1"][:3] = [1.0, 2.0, 3.0]  # m
    eps = np.array([[0.5, -1.0, 2.0]])
    out, ld = iaf_step(eps, None, net, params)
    np.testing.assert_allclose(out, 0.5 * eps + 0.5 * np.array([1.0, 2.0, 3.0]))
    assert np.isclose(ld[0], -3 * math.log(2), atol=1e-15)
    assert np.isclose(ld[0], -2.0794415, atol=1e-7)


def test_iaf_gate_logdet_strictly_negative():
    model, params = make_model("iaf", 4, steps=3, seed=5)
    res = posterior_sample_and_logq(model, np.ones((50, 5)), params, rng=Rng(0))
    for ld in res.logdets:
        assert np.all(ld < 0)


def test_empty_chain_is_factorized_gaussian():
    rng = np.random.default_rng(0)
    mu, ls, eps = rng.normal(size=(3, 4, 3))
    z0 = mu + np.exp(ls) * eps
    lq0 = dist.standard_normal_logprob(eps) - ls.sum(-1)
    z, lq, lds = iaf_chain(z0, lq0, None, [], {})
    np.testing.assert_array_equal(z, z0)
    np.testing.assert_allclose(lq, dist.diag_gaussian_logprob(z0, dist.DiagGaussian(mu, ls)), rtol=1e-12)
    assert lds == []


def test_reverse_ordering():
    np.testing.assert_array_equal(reverse_ordering(np.array([1, 2, 3])), [3, 2, 1])
    x = np.random.default_rng(0).normal(size=(4, 5))
    np.testing.assert_array_equal(reverse_ordering(reverse_ordering(x)), x)


# --- change of variables over every family -----------------------------------

@pytest.mark.parametrize("kind,D,steps", [
    ("diag", 3, 1), ("fullcov", 2, 1), ("fullcov", 4, 1),
    ("planar", 2, 1), ("planar", 3, 3), ("planar", 5, 2),
    ("iaf", 2, 1), ("iaf", 3, 2), ("iaf", 5, 3),
])
def test_logq_matches_change_of_variables(kind, D, steps):
    model, params = make_model(kind, D, steps, seed=D + steps)
    rng = np.random.default_rng(steps)
    for _ in range(3):
        x = rng.normal(size=5)
        eps = rng.normal(size=D)
        res = posterior_sample_and_logq(model, x[None], params, eps=eps[None])
        ref = change_of_variables_logq(model, params, x, eps)
        assert abs(res.log_q[0] - ref) / max(1.0, abs(ref)) < 1e-6


def test_raw_iaf_form_change_of_variables():
    spec = PosteriorSpec("iaf", 3, 2, context_dim=2, made_hidden=[6], gated=False)
    model = InferenceModel(spec, 4, [5])
    params = jitter(model.init(Rng(1)), 1, scale=0.3)
    x, eps = np.random.default_rng(2).normal(size=(2, 4))[0], np.array([0.2, -0.5, 1.1])
    res = posterior_sample_and_logq(model, x[None], params, eps=eps[None])
    assert abs(res.log_q[0] - change_of_variables_logq(model, params, x, eps)) < 1e-6


def test_diag_zero_noise():
    model, params = make_model("diag", 3)
    x = np.ones((1, 5))
    res = posterior_sample_and_logq(model, x, params, eps=np.zeros((1, 3)))
    np.testing.assert_array_equal(res.z, res.mu)
    assert np.isclose(res.log_q[0], np.sum(-0.5 * math.log(2 * math.pi) - res.log_sigma))


def test_fullcov_delegation():
    model, params = make_model("fullcov", 3)
    x = np.random.default_rng(0).normal(size=(4, 5))
    eps = np.random.default_rng(1).normal(size=(4, 3))
    res = posterior_sample_and_logq(model, x, params, eps=eps)
    heads = model.encode(params, x)
    L = dist.build_masked_L(heads["L_raw"].reshape(4, 3, 3), np.exp(heads["log_sigma"]))
    z, lq = dist.fullcov_sample_and_logprob(dist.FullCovGaussian(heads["mu"], L), eps)
    np.testing.assert_array_equal(res.z, z)
    np.testing.assert_array_equal(res.log_q, lq)


def test_unknown_kind():
    with pytest.raises(ValueError):
        PosteriorSpec("radial", 2)
    with pytest.raises(ValueError):
        PosteriorSpec("iaf", 2, steps=0)


# --- linear IAF equals full covariance ------------------------------------------

def linear_iaf_setup(D, seed):
    spec = PosteriorSpec("iaf", D, 1, context_dim=0, made_hidden=[])
    model = InferenceModel(spec, 3, [4])
    params = jitter(model.init(Rng(seed)), seed)
    params["iaf0.W0"][:, D:] = 0.0  # s independent of z, so the step is affine
    net = model.nets[0]
    A = (params["iaf0.W0"] * net.out_mask)[:, :D].T  # m = A z + c
    c = params["iaf0.b0"][:D]
    sig = 1.0 / (1.0 + np.exp(-params["iaf0.b0"][D:]))
    return model, params, A, c, sig


def test_linear_iaf_matches_fullcov_density():
    D = 4
    model, params, A, c, sig = linear_iaf_setup(D, 3)
    assert np.allclose(np.triu(A), 0)
    x = np.random.default_rng(0).normal(size=(1, 3))
    heads = model.encode(params, x)
    mu0, sigma0 = heads["mu"][0], np.exp(heads["log_sigma"][0])
    M = np.diag(sig) + np.diag(1 - sig) @ A
    L = M @ np.diag(sigma0)
    mean = M @ mu0 + (1 - sig) * c
    eps = Rng(9).normal((100, D))
    res = posterior_sample_and_logq(model, np.repeat(x, 100, axis=0), params, eps=eps)
    z_fc, lq_fc = dist.fullcov_sample_and_logprob(
        dist.FullCovGaussian(mean, np.broadcast_to(L, (100, D, D))), eps)
    np.testing.assert_allclose(res.z, z_fc, rtol=1e-12, atol=1e-12)
    assert np.max(np.abs(res.log_q - lq_fc) / np.abs(lq_fc)) < 1e-8
    dense = stats.multivariate_normal(mean, L @ L.T).logpdf(res.z)
    assert np.max(np.abs(res.log_q - dense) / np.abs(dense)) < 1e-8


# --- reversal is volume preserving ------------------------------------------------

def test_reversal_equals_rebuilt_masks():
    D, ctx = 4, 3
    spec = PosteriorSpec("iaf", D, 2, context_dim=ctx, made_hidden=[8, 8], reverse=True)
    model = InferenceModel(spec, 5, [6])
    params = jitter(model.init(Rng(4)), 4, scale=0.4)

    # second net rebuilt on the reversed ordering, weights permuted to give P f(P z)
    alt = MaskedNet("iaf1", D, [8, 8], ctx, ordering=list(range(D))[::-1])
    alt_params = dict(params)
    perm = np.arange(D)[::-1]
    out_perm = np.concatenate([perm, D + perm])
    alt_params["iaf1.W0"] = params["iaf1.W0"][perm]
    alt_params["iaf1.W2"] = params["iaf1.W2"][:, out_perm]
    alt_params["iaf1.b2"] = params["iaf1.b2"][out_perm]
    alt_params["iaf1.V2"] = params["iaf1.V2"][:, out_perm]
    np.testing.assert_array_equal(alt.masks[0], model.nets[1].masks[0][perm])

    x = np.random.default_rng(1).normal(size=(20, 5))
    eps = np.random.default_rng(2).normal(size=(20, D))
    res = posterior_sample_and_logq(model, x, params, eps=eps)

    heads = model.encode(params, x)
    z = heads["mu"] + np.exp(heads["log_sigma"]) * eps
    lq = dist.standard_normal_logprob(eps) - heads["log_sigma"].sum(-1)
    z, lq, _ = iaf_chain(z, lq, heads["h"], [model.nets[0], alt], alt_params, reverse=False)
    np.testing.assert_allclose(z, reverse_ordering(res.z), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(lq, res.log_q, rtol=1e-12)

    # and the dense Jacobian oracle agrees on the composed map with reversal
    ref = change_of_variables_logq(model, params, x[0], eps[0])
    assert abs(res.log_q[0] - ref) / abs(ref) < 1e-6


# --- empirical density -------------------------------------------------------------

def invert_iaf(model, params, x, y):
    """Map posterior samples ``y`` back to base noise; exact after D fixed-point sweeps."""
    heads = model.encode(params, x)
    h = heads.get("h")
    D = model.spec.latent_dim
    z = y
    for t in reversed(range(len(model.nets))):
        net = model.nets[t]
        prev = np.zeros_like(z)
        for _ in range(D):
            m, s = net(params, prev, h)
            sig = 1.0 / (1.0 + np.exp(-s))
            prev = (z - (1 - sig) * m) / sig
        z = prev
        if model.spec.reverse and t > 0:
            z = reverse_ordering(z)
    return (z - heads["mu"]) / np.exp(heads["log_sigma"])


@pytest.mark.slow
def test_iaf_histogram_matches_density():
    model, params = make_model("iaf", 2, steps=2, ctx=3, seed=11)
    n = 100_000
    x = np.full((1, 5), 0.3)
    samples = posterior_sample_and_logq(model, np.repeat(x, n, axis=0), params, rng=Rng(12)).z

    lo, hi = np.quantile(samples, 0.0005, axis=0), np.quantile(samples, 0.9995, axis=0)
    bins, sub = 20, 6
    edges = [np.linspace(lo[d], hi[d], bins + 1) for d in range(2)]
    hist, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=edges)
    p_hist = hist / n

    # midpoint rule on a sub-grid inside each bin
    fine = [np.linspace(lo[d], hi[d], bins * sub + 1) for d in range(2)]
    mids = [(f[1:] + f[:-1]) / 2 for f in fine]
    gx, gy = np.meshgrid(mids[0], mids[1], indexing="ij")
    y = np.stack([gx.ravel(), gy.ravel()], axis=1)
    xs = np.repeat(x, len(y), axis=0)
    eps = invert_iaf(model, params, xs, y)
    res = posterior_sample_and_logq(model, xs, params, eps=eps)
    np.testing.assert_allclose(res.z, y, atol=1e-9)
    cell = np.diff(fine[0])[0] * np.diff(fine[1])[0]
    dens = np.exp(res.log_q).reshape(bins * sub, bins * sub) * cell
    p_dens = dens.reshape(bins, sub, bins, sub).sum(axis=(1, 3))

    outside_hist = 1.0 - p_hist.sum()
    outside_dens = 1.0 - p_dens.sum()
    tv = 0.5 * (np.abs(p_hist - p_dens).sum() + abs(outside_hist - outside_dens))
    assert tv < 0.05, tv
