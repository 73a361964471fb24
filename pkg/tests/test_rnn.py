"""Tests for the shared RNN core: shapes, flattening, clipping, I/O."""

import numpy as np
import pytest

from markerpred.rnn import (
    NonFiniteError,
    RnnDims,
    clip_gradient,
    flatten_params,
    forward,
    init_params,
    load_params,
    loss,
    save_params,
    tanh_prime,
    unflatten_params,
)


def test_param_count_formula():
    dims = RnnDims(q=90, m=3 * 3 * 70, p=9)
    assert dims.n_params == 90 * (9 + 90 + 3 * 3 * 70 + 1)
    assert dims.n_params == 65_700


def test_param_count_small():
    # q=10, m=91, p=9: 10*10 + 10*92 + 9*10 contributions.
    dims = RnnDims(q=10, m=91, p=9)
    assert dims.n_params == 100 + 920 + 90
    assert dims.n_params == 10 * (9 + 10 + 91 + 1)


def test_dims_reject_nonpositive():
    with pytest.raises(ValueError):
        RnnDims(q=0, m=5, p=3)
    with pytest.raises(ValueError):
        RnnDims(q=4, m=-1, p=3)


def test_init_params_shapes_and_scale():
    dims = RnnDims(q=40, m=60, p=6)
    params = init_params(dims, sigma_init=0.05, seed=7)
    assert params.w_a.shape == (40, 40)
    assert params.w_b.shape == (40, 61)
    assert params.w_c.shape == (6, 40)
    pooled = np.concatenate([params.w_a.ravel(), params.w_b.ravel(), params.w_c.ravel()])
    # Sample std of ~4k draws from N(0, 0.05^2) should sit near 0.05.
    assert abs(pooled.std() - 0.05) < 0.005
    assert abs(pooled.mean()) < 0.005


def test_init_params_deterministic():
    dims = RnnDims(q=8, m=5, p=2)
    a = init_params(dims, sigma_init=0.02, seed=123)
    b = init_params(dims, sigma_init=0.02, seed=123)
    c = init_params(dims, sigma_init=0.02, seed=124)
    assert np.array_equal(a.w_a, b.w_a)
    assert np.array_equal(a.w_b, b.w_b)
    assert np.array_equal(a.w_c, b.w_c)
    assert not np.array_equal(a.w_a, c.w_a)


def test_init_params_rejects_bad_sigma():
    with pytest.raises(ValueError):
        init_params(RnnDims(q=3, m=3, p=3), sigma_init=0.0, seed=0)


def test_forward_matches_direct_computation():
    rng = np.random.default_rng(0)
    dims = RnnDims(q=6, m=4, p=3)
    params = init_params(dims, sigma_init=0.3, seed=1)
    x = rng.standard_normal(6)
    u = rng.standard_normal(5)
    cache = forward(params, x, u)
    z = params.w_a @ x + params.w_b @ u
    assert np.allclose(cache.z, z, rtol=0, atol=0)
    assert np.allclose(cache.x_next, np.tanh(z), rtol=0, atol=0)
    assert np.allclose(cache.y, params.w_c @ np.tanh(z), rtol=0, atol=0)


def test_forward_rejects_bad_shapes():
    params = init_params(RnnDims(q=6, m=4, p=3), sigma_init=0.1, seed=0)
    with pytest.raises(ValueError):
        forward(params, np.zeros(5), np.zeros(5))
    with pytest.raises(ValueError):
        forward(params, np.zeros(6), np.zeros(4))


def test_loss_definition():
    y = np.array([1.0, 2.0, 3.0])
    y_star = np.array([2.0, 2.0, 1.0])
    e, value = loss(y, y_star)
    assert np.array_equal(e, [1.0, 0.0, -2.0])
    assert value == pytest.approx(0.5 * (1 + 4))


def test_tanh_prime_finite_difference():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(50) * 2.0
    eps = 1e-6
    fd = (np.tanh(z + eps) - np.tanh(z - eps)) / (2 * eps)
    assert np.allclose(tanh_prime(z), fd, atol=1e-9)


def test_clip_gradient_over_threshold():
    g = np.array([3.0, 4.0])
    clipped = clip_gradient(g, tau=2.0)
    assert np.linalg.norm(clipped) == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(clipped, [1.2, 1.6])


def test_clip_gradient_under_threshold_identity():
    g = np.array([0.3, -0.4, 0.1])
    clipped = clip_gradient(g, tau=2.0)
    assert clipped is g


def test_clip_gradient_randomized():
    # Acceptance-style property on a smaller batch: post-clip norm <= tau,
    # under-norm vectors pass through bit-identically.
    rng = np.random.default_rng(42)
    tau = 2.0
    for _ in range(1000):
        g = rng.standard_normal(rng.integers(1, 20)) * rng.uniform(0.01, 5.0)
        out = clip_gradient(g, tau)
        if np.linalg.norm(g) > tau:
            assert np.linalg.norm(out) <= tau + 1e-12
        else:
            assert out is g


def test_flatten_is_column_major():
    dims = RnnDims(q=2, m=1, p=1)
    params = init_params(dims, sigma_init=1.0, seed=0)
    theta = flatten_params(params)
    w_a, w_b, w_c = params.w_a, params.w_b, params.w_c
    expected = np.array(
        [
            w_a[0, 0], w_a[1, 0], w_a[0, 1], w_a[1, 1],
            w_b[0, 0], w_b[1, 0], w_b[0, 1], w_b[1, 1],
            w_c[0, 0], w_c[0, 1],
        ]
    )
    assert np.array_equal(theta, expected)


def test_flatten_unflatten_roundtrip():
    dims = RnnDims(q=7, m=11, p=4)
    params = init_params(dims, sigma_init=0.5, seed=5)
    theta = flatten_params(params)
    assert theta.shape == (dims.n_params,)
    back = unflatten_params(theta, dims)
    assert np.array_equal(back.w_a, params.w_a)
    assert np.array_equal(back.w_b, params.w_b)
    assert np.array_equal(back.w_c, params.w_c)


def test_unflatten_rejects_wrong_length():
    with pytest.raises(ValueError):
        unflatten_params(np.zeros(11), RnnDims(q=2, m=1, p=1))


def test_checkpoint_roundtrip(tmp_path):
    dims = RnnDims(q=5, m=9, p=3)
    params = init_params(dims, sigma_init=0.1, seed=9)
    path = tmp_path / "weights.bin"
    save_params(path, params)
    back = load_params(path)
    assert back.dims == dims
    assert np.array_equal(flatten_params(back), flatten_params(params))


def test_checkpoint_rejects_truncated(tmp_path):
    dims = RnnDims(q=5, m=9, p=3)
    params = init_params(dims, sigma_init=0.1, seed=9)
    path = tmp_path / "weights.bin"
    save_params(path, params)
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(ValueError):
        load_params(path)


def test_nonfinite_error_carries_quantity():
    err = NonFiniteError("loss")
    assert err.quantity == "loss"
    assert "loss" in str(err)
