import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmlab.neural import (
    AdamState,
    NetSpec,
    QNetwork,
    adam_step,
    batch_loss,
    estimate_fisher_diag,
    ewc_penalty_and_grad,
    forward,
    grad,
    init_params,
    layer_freeze_mask,
    load_params,
    loss_and_grad,
    save_params,
)

from .oracles import adam_closed_form_first_step, central_difference, plain_mlp


def unpack(spec, params):
    ws, bs = [], []
    for w, shape, b in spec.layout():
        ws.append(params[w].reshape(shape))
        bs.append(params[b])
    return ws, bs


def random_problem(rng, sizes=(8, 16, 4), n=6):
    spec = NetSpec(tuple(sizes))
    params = rng.normal(0, 0.5, spec.n_params)
    x = rng.normal(size=(n, sizes[0]))
    a = rng.integers(sizes[-1], size=n)
    y = rng.normal(size=n) * 3
    return spec, params, x, a, y


def test_mm_spec_shape():
    spec = NetSpec.mm(8)
    assert spec.sizes == (8, 32, 32, 32, 605)
    assert spec.n_params == 8 * 32 + 32 + 2 * (32 * 32 + 32) + 32 * 605 + 605
    out = forward(spec, init_params(spec, np.random.default_rng(0)), np.zeros(8))
    assert out.shape == (605,)


def test_init_is_he_scaled_with_zero_bias():
    spec = NetSpec((400, 300, 5))
    p1 = init_params(spec, np.random.default_rng(0))
    assert np.array_equal(p1, init_params(spec, np.random.default_rng(0)))
    ws, bs = unpack(spec, p1)
    assert all(np.all(b == 0) for b in bs)
    assert abs(ws[0].var() - 2 / 400) < 0.05 * 2 / 400
    assert abs(ws[1].var() - 2 / 300) < 0.15 * 2 / 300


def test_forward_matches_plain_mlp():
    rng = np.random.default_rng(1)
    spec, params, x, _, _ = random_problem(rng, (5, 7, 6, 3))
    ws, bs = unpack(spec, params)
    assert np.allclose(forward(spec, params, x), plain_mlp(x, ws, bs))
    assert np.allclose(forward(spec, params, x[0]), plain_mlp(x[0], ws, bs))


def test_forward_zero_params_and_hand_net():
    spec = NetSpec((1, 1, 1))
    assert forward(spec, np.zeros(spec.n_params), np.array([3.0]))[0] == 0.0
    # y = 2 * relu(3x + 1) - 4
    params = np.array([3.0, 1.0, 2.0, -4.0])
    assert forward(spec, params, np.array([2.0]))[0] == 2 * 7 - 4
    assert forward(spec, params, np.array([-2.0]))[0] == -4


@pytest.mark.parametrize("seed", range(20))
def test_mse_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    spec, params, x, a, y = random_problem(rng)
    g = grad(spec, params, x, a, y, "mse")
    fd = central_difference(lambda p: batch_loss(spec, p, x, a, y, "mse"), params)
    rel = np.abs(g - fd) / np.maximum(np.abs(g) + np.abs(fd), 1e-8)
    assert rel.max() < 1e-4


def test_mae_gradient_matches_finite_differences_away_from_kinks():
    rng = np.random.default_rng(7)
    spec, params, x, a, y = random_problem(rng)
    y = forward(spec, params, x)[np.arange(len(a)), a] + np.where(rng.random(len(a)) < 0.5, -5.0, 5.0)
    g = grad(spec, params, x, a, y, "mae")
    fd = central_difference(lambda p: batch_loss(spec, p, x, a, y, "mae"), params)
    rel = np.abs(g - fd) / np.maximum(np.abs(g) + np.abs(fd), 1e-8)
    assert rel.max() < 1e-4


def test_gradient_rules():
    rng = np.random.default_rng(3)
    spec, params, x, a, _ = random_problem(rng)
    exact = forward(spec, params, x)[np.arange(len(a)), a]
    for kind in ("mse", "mae"):
        assert np.all(grad(spec, params, x, a, exact, kind) == 0)
    g1 = grad(spec, params, x, a, exact + 1.0, "mae")
    g2 = grad(spec, params, x, a, exact + 100.0, "mae")
    assert np.allclose(g1, g2)
    with pytest.raises(ValueError):
        loss_and_grad(spec, params, x[:0], a[:0], exact[:0])


def test_adam_closed_form_and_masks():
    g = np.array([0.3, -2.0, 1e-3, 0.0])
    p = np.ones(4)
    st_ = AdamState(4)
    adam_step(p, g, st_)
    assert np.allclose(p - 1, adam_closed_form_first_step(g), rtol=1e-9, atol=1e-15)
    assert st_.t == 1
    p = np.ones(4)
    adam_step(p, np.zeros(4), AdamState(4))
    assert np.all(p == 1)
    p = np.ones(4)
    s2 = AdamState(4)
    adam_step(p, g, s2, np.ones(4, dtype=bool))
    assert np.all(p == 1) and np.all(s2.m == 0)


def test_freeze_mask_layers():
    spec = NetSpec((3, 4, 2))
    m = layer_freeze_mask(spec, [0])
    (w0, _, b0), (w1, _, b1) = spec.layout()
    assert m[w0].all() and m[b0].all() and not m[w1].any() and not m[b1].any()


def test_fisher_rules():
    rng = np.random.default_rng(4)
    spec, params, x, a, _ = random_problem(rng)
    exact = forward(spec, params, x)[np.arange(len(a)), a]
    assert np.all(estimate_fisher_diag(spec, params, x, a, exact) == 0)
    y = exact + rng.normal(size=len(a))
    f = estimate_fisher_diag(spec, params, x, a, y)
    assert np.all(f >= 0)
    f2 = estimate_fisher_diag(spec, params, np.concatenate([x, x]), np.concatenate([a, a]), np.concatenate([y, y]))
    assert np.allclose(f, f2)
    # oracle: mean of squared single-sample gradients, each from finite differences
    per = [
        central_difference(lambda p, i=i: batch_loss(spec, p, x[i : i + 1], a[i : i + 1], y[i : i + 1], "mse"), params)
        for i in range(len(a))
    ]
    assert np.allclose(f, np.mean(np.square(per), axis=0), rtol=1e-4, atol=1e-8)


def test_ewc_penalty():
    pen, g = ewc_penalty_and_grad(np.array([4.0]), np.array([1.0]), np.array([2.0]), 1.0)
    assert (pen, g[0]) == (9.0, 6.0)
    theta = np.arange(5.0)
    assert ewc_penalty_and_grad(theta, theta, np.ones(5), 3.0)[0] == 0
    assert ewc_penalty_and_grad(theta, theta + 1, np.ones(5), 0.0)[0] == 0


def test_save_load_roundtrip(tmp_path):
    spec = NetSpec.mm(8, hidden=(4,))
    params = init_params(spec, np.random.default_rng(0))
    path = tmp_path / "p.npz"
    save_params(path, spec, params)
    spec2, p2 = load_params(path, spec)
    assert spec2 == spec and np.array_equal(p2, params)
    x = np.random.default_rng(1).normal(size=(3, 8))
    assert np.array_equal(forward(spec2, p2, x), forward(spec, params, x))
    with pytest.raises(ValueError):
        load_params(path, NetSpec.mm(10, hidden=(4,)))


def test_corrupt_header_rejected(tmp_path):
    spec = NetSpec((2, 2, 2))
    path = tmp_path / "bad.npz"
    np.savez(path, params=np.zeros(spec.n_params), header=np.array(json.dumps({"format": 999})))
    with pytest.raises(ValueError):
        load_params(path)
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(ValueError):
        load_params(tmp_path / "junk.npz")


def test_fit_step_reduces_loss_on_fixed_batch():
    rng = np.random.default_rng(5)
    spec = NetSpec((4, 16, 3))
    net = QNetwork(spec, rng, lr=0.01, loss_kind="mse")
    x = rng.normal(size=(32, 4))
    a = rng.integers(3, size=32)
    y = x[:, 0] * 2 - 1
    first = net.fit_step(x, a, y)
    for _ in range(100):
        last = net.fit_step(x, a, y)
    assert last < 0.5 * first


@given(st.integers(0, 2**31))
def test_frozen_layer_bit_identical(seed):
    rng = np.random.default_rng(seed)
    spec = NetSpec((3, 5, 5, 2))
    net = QNetwork(spec, rng)
    net.freeze_mask = layer_freeze_mask(spec, [0, 1])
    before = net.copy_params()
    for _ in range(5):
        net.fit_step(rng.normal(size=(4, 3)), rng.integers(2, size=4), rng.normal(size=4))
    m = net.freeze_mask
    assert np.array_equal(net.params[m], before[m])
    assert not np.array_equal(net.params[~m], before[~m])
