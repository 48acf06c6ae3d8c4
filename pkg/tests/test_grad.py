import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tauresnet.core import SeedSpec
from tauresnet.data import Dataset, gen_separated_dataset
from tauresnet.grad import (
    backprop,
    bp_vector,
    finite_diff_gradient,
    kink_rows,
    loss,
    loss_and_grad,
    relative_errors,
)
from tauresnet.model import NetworkConfig, NetworkParams, forward, init_network, traces_from_batch


def setup(seed=0, L=4, m=8, p=4, d=3, n=2, tau=0.5):
    ds = gen_separated_dataset(n, p, d, 0.5, seed=seed + 1000)
    params = init_network(NetworkConfig(L, m, p, d, tau), SeedSpec(seed))
    return params, ds


def positive_net():
    """L=2, every pre-activation positive: the network is linear in the region."""
    rng = np.random.default_rng(4)
    cfg = NetworkConfig(2, 3, 2, 1, 0.3)
    A = rng.uniform(0.1, 1, (3, 2))
    W = [rng.uniform(0.1, 1, (3, 3)) for _ in range(2)]
    B = rng.uniform(0.1, 1, (1, 3))
    x = np.array([0.6, 0.8])
    ds = Dataset(x[None], np.array([[0.25]]), float("inf"))
    return NetworkParams(cfg, A, W, B), ds


def test_linear_regime_closed_form():
    params, ds = positive_net()
    A, (W1, W2), B = params.A, params.W, params.B
    tau = params.tau
    x, y = ds.features[0], ds.targets[0]
    h0 = A @ x
    h1 = h0 + tau * W1 @ h0
    r = B @ W2 @ h1 - y
    expect_W2 = np.outer(B.T @ r, h1)
    expect_W1 = tau * np.outer(W2.T @ B.T @ r, h0)
    _, G = loss_and_grad(params, ds)
    np.testing.assert_allclose(G.dW[1], expect_W2, rtol=1e-12)
    np.testing.assert_allclose(G.dW[0], expect_W1, rtol=1e-12)
    fd = finite_diff_gradient(params, ds)
    np.testing.assert_allclose(fd.dW[0], expect_W1, rtol=1e-7)
    np.testing.assert_allclose(fd.dW[1], expect_W2, rtol=1e-7)


def test_fd_truncation_free_within_activation_region():
    # along one weight entry F is exactly quadratic inside an activation
    # region, so central differences carry no truncation term: the error is
    # rounding only and grows roughly like 1/step
    params, ds = setup(seed=3)
    _, G = loss_and_grad(params, ds)
    errs = [max(relative_errors(G, finite_diff_gradient(params, ds, step=h))) for h in (1e-3, 1e-4, 1e-5)]
    assert max(errs) < 1e-8
    assert errs[0] < errs[2]


def test_single_sample_reduces_to_bp_vector():
    params, ds = setup(n=1)
    rep, G = loss_and_grad(params, ds)
    tr = forward(params, ds.features[0])
    for l in range(1, 5):
        np.testing.assert_allclose(G.dW[l - 1], bp_vector(params, tr, rep.loss_vectors[0], ("W", l)), atol=1e-15)


def test_gradient_linear_in_loss_vectors():
    params, ds = setup(seed=8)
    rep = loss(params, ds)
    traces = traces_from_batch(params, ds.features)
    G = backprop(params, traces, rep)
    scaled = type(rep)(rep.total, rep.per_sample, -2.5 * rep.loss_vectors)
    H = backprop(params, traces, scaled)
    for a, b in zip(G.scaled(-2.5).dW, H.dW):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-16)


def test_fd_matches_backprop():
    params, ds = setup(seed=1)
    _, G = loss_and_grad(params, ds)
    fd = finite_diff_gradient(params, ds)
    kinks = kink_rows(params, ds, 1e-4)
    assert max(relative_errors(G, fd, kinks)) <= 1e-6


def test_fd_refuses_large_networks():
    params, ds = setup(L=4, m=64)
    assert finite_diff_gradient(params, ds) is None


def test_fd_rejects_bad_step():
    params, ds = setup()
    with pytest.raises(ValueError):
        finite_diff_gradient(params, ds, step=0.0)


def test_zero_loss_gives_zero_gradient():
    params, ds = setup()
    rep = loss(params, ds)
    fitted = ds.with_targets(ds.targets + rep.loss_vectors)
    r2, G = loss_and_grad(params, fitted)
    assert r2.total == pytest.approx(0, abs=1e-28)
    assert max(np.abs(g).max() for g in G.dW) < 1e-14
    fd = finite_diff_gradient(params, fitted)
    assert max(np.abs(g).max() for g in fd.dW) < 1e-9


def test_backprop_matches_batched_path():
    params, ds = setup(seed=2, n=3)
    rep, G = loss_and_grad(params, ds)
    traces = traces_from_batch(params, ds.features)
    H = backprop(params, traces, rep)
    for a, b in zip(G.dW, H.dW):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        backprop(params, traces[:2], rep)


def test_loss_vectors():
    params, ds = setup()
    rep = loss(params, ds)
    for i, x in enumerate(ds.features):
        np.testing.assert_allclose(rep.loss_vectors[i], forward(params, x).y - ds.targets[i])
    assert rep.total == pytest.approx(rep.per_sample.sum())


def test_bp_vector_zero_and_selectors():
    params, ds = setup()
    tr = forward(params, ds.features[0])
    assert not np.any(bp_vector(params, tr, np.zeros(3), ("W", 2)))
    assert bp_vector(params, tr, np.ones(3), ("h", 4)).shape == (8,)
    for bad in [("W", 0), ("W", 5), ("h", -1), ("q", 1)]:
        with pytest.raises(ValueError):
            bp_vector(params, tr, np.ones(3), bad)


def test_bp_vector_h_is_directional_derivative():
    params, ds = setup(seed=6)
    x = ds.features[0]
    tr = forward(params, x)
    v = np.array([0.3, -1.0, 0.5])
    grad_h0 = bp_vector(params, tr, v, ("h", 0))
    # perturb h_0 through the input path: h_0 = relu(Ax) is linear near x in the active set
    u = np.random.default_rng(0).standard_normal(4)
    eps = 1e-6
    fp = v @ forward(params, x + eps * u).y
    fm = v @ forward(params, x - eps * u).y
    dh0 = tr.D[0] * (params.A @ u)
    assert (fp - fm) / (2 * eps) == pytest.approx(grad_h0 @ dh0, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), a=st.floats(-3, 3), b=st.floats(-3, 3), layer=st.integers(1, 4))
def test_bp_vector_linear(seed, a, b, layer):
    params, ds = setup(seed=seed % 50)
    tr = forward(params, ds.features[0])
    rng = np.random.default_rng(seed)
    u, w = rng.standard_normal(3), rng.standard_normal(3)
    lhs = bp_vector(params, tr, a * u + b * w, ("W", layer))
    rhs = a * bp_vector(params, tr, u, ("W", layer)) + b * bp_vector(params, tr, w, ("W", layer))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_residual_gradients_carry_tau():
    params, ds = setup(tau=0.0)
    _, G = loss_and_grad(params, ds)
    assert all(not np.any(g) for g in G.dW[:-1])
    assert np.any(G.dW[-1])
