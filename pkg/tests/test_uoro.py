"""Tests for the UORO trainer: closed-form gradient pieces against
finite-difference oracles, the frozen step order, and estimator propertie."""

import numpy as np
import pytest

from markerpred.rnn import (
    NonFiniteError,
    RnnDims,
    flatten_params,
    forward,
    init_params,
    loss,
    unflatten_params,
)
from markerpred.rtrl import jac_state_theta, jac_state_x
from markerpred.uoro import (
    EPS_NORM,
    UoroHyper,
    UoroMemory,
    delta_theta,
    delta_theta_g,
    grad_x_loss,
    init_memory,
    tangent_propagate,
    uoro_step,
)


def _instance(q=5, m=7, p=4, seed=0, sigma=0.4):
    rng = np.random.default_rng(seed)
    dims = RnnDims(q=q, m=m, p=p)
    params = init_params(dims, sigma_init=sigma, seed=seed + 1)
    x = np.tanh(rng.standard_normal(q))
    u = rng.standard_normal(m + 1)
    u[0] = 1.0
    y_star = rng.standard_normal(p)
    return dims, params, x, u, y_star, rng


def _hyper(dims, eta=0.1, tau=2.0):
    return UoroHyper(eta=eta, tau=tau, sigma_init=0.02, L=2, q=dims.q)


# -------------------------- grad_x_loss -----------------------------------


def test_grad_x_loss_zero_error():
    w_c = np.random.default_rng(0).standard_normal((3, 5))
    assert np.array_equal(grad_x_loss(np.zeros(3), w_c), np.zeros(5))


def test_grad_x_loss_identity_output():
    e = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(grad_x_loss(e, np.eye(3)), -e)


def test_grad_x_loss_finite_difference():
    # Oracle: central differences of L(x) = 0.5 ||y* - W_c x||^2 in x.
    rng = np.random.default_rng(4)
    w_c = rng.standard_normal((4, 6))
    x = rng.standard_normal(6)
    y_star = rng.standard_normal(4)
    e, _ = loss(w_c @ x, y_star)
    got = grad_x_loss(e, w_c)
    eps = 1e-6
    fd = np.empty(6)
    for i in range(6):
        dx = np.zeros(6)
        dx[i] = eps
        _, up = loss(w_c @ (x + dx), y_star)
        _, down = loss(w_c @ (x - dx), y_star)
        fd[i] = (up - down) / (2 * eps)
    assert np.linalg.norm(got - fd) <= 1e-6 * np.linalg.norm(fd)


def test_grad_x_loss_shape_mismatch():
    with pytest.raises(ValueError):
        grad_x_loss(np.zeros(3), np.zeros((4, 5)))


# -------------------------- delta_theta -----------------------------------


def test_delta_theta_zero_error():
    dims = RnnDims(q=4, m=3, p=2)
    out = delta_theta(np.zeros(2), np.ones(4), dims)
    assert np.array_equal(out, np.zeros(dims.n_params))


def test_delta_theta_scalar_case():
    dims = RnnDims(q=1, m=1, p=1)
    out = delta_theta(np.array([2.0]), np.array([3.0]), dims)
    assert out[-1] == -6.0
    assert np.array_equal(out[:-1], np.zeros(dims.n_params - 1))


def test_delta_theta_finite_difference():
    # Oracle: perturb each W_c entry by +-1e-6 in the measurement loss
    # while the state path stays fixed.
    dims, params, x, u, y_star, _ = _instance(seed=2)
    cache = forward(params, x, u)
    e, _ = loss(cache.y, y_star)
    got = delta_theta(e, cache.x_next, dims)

    eps = 1e-6
    fd = np.zeros(dims.n_params)
    theta = flatten_params(params)
    for c in range(dims.n_wa + dims.n_wb, dims.n_params):
        for sign, bucket in ((1.0, 0), (-1.0, 1)):
            shifted = theta.copy()
            shifted[c] += sign * eps
            w_c = unflatten_params(shifted, dims).w_c
            _, value = loss(w_c @ cache.x_next, y_star)
            fd[c] += (value if bucket == 0 else -value)
        fd[c] /= 2 * eps
    assert np.linalg.norm(got - fd) <= 1e-6 * np.linalg.norm(fd)
    assert np.array_equal(got[: dims.n_wa + dims.n_wb], np.zeros(dims.n_wa + dims.n_wb))


def test_delta_theta_shape_mismatch():
    dims = RnnDims(q=4, m=3, p=2)
    with pytest.raises(ValueError):
        delta_theta(np.zeros(3), np.ones(4), dims)


# -------------------------- delta_theta_g ---------------------------------


def _state_map(theta, dims, x, u):
    params = unflatten_params(theta, dims)
    return np.tanh(params.w_a @ x + params.w_b @ u)


def _brute_force_state_jacobian(theta, dims, x, u, eps=1e-6):
    """Columns of d tanh(W_a x + W_b u) / d theta by central differences."""
    jac = np.empty((dims.q, dims.n_params))
    for c in range(dims.n_params):
        shift = np.zeros(dims.n_params)
        shift[c] = eps
        jac[:, c] = (
            _state_map(theta + shift, dims, x, u)
            - _state_map(theta - shift, dims, x, u)
        ) / (2 * eps)
    return jac


def test_delta_theta_g_zero_inputs():
    dims = RnnDims(q=3, m=2, p=2)
    nu = np.ones(3)
    z = np.random.default_rng(0).standard_normal(3)
    out = delta_theta_g(nu, z, np.zeros(3), np.zeros(3), dims)
    assert np.array_equal(out, np.zeros(dims.n_params))


def test_delta_theta_g_saturated():
    dims, params, x, u, _, _ = _instance(seed=3)
    nu = np.ones(dims.q)
    z = np.full(dims.q, 30.0)
    out = delta_theta_g(nu, z, x, u, dims)
    assert np.abs(out).max() < 1e-20


def test_delta_theta_g_matches_brute_force_jacobian():
    # Oracle: nu^T J where J is the full state-map Jacobian in theta,
    # built one parameter at a time.
    dims, params, x, u, _, rng = _instance(seed=5)
    z = params.w_a @ x + params.w_b @ u
    nu = 2.0 * rng.integers(0, 2, size=dims.q) - 1.0
    got = delta_theta_g(nu, z, x, u, dims)
    jac = _brute_force_state_jacobian(flatten_params(params), dims, x, u)
    expected = nu @ jac
    assert np.linalg.norm(got - expected) <= 1e-5 * np.linalg.norm(expected)


# -------------------------- tangent_propagate -----------------------------


def test_tangent_propagate_zero_direction():
    dims, params, x, u, _, _ = _instance(seed=6)
    cache = forward(params, x, u)
    out = tangent_propagate(params, x, np.zeros(dims.q), u, cache.x_next)
    assert np.abs(out).max() <= 1e-9


def test_tangent_propagate_matches_exact_jvp():
    # Oracle: diag(tanh'(z)) W_a x_tilde, the exact Jacobian-vector product.
    dims, params, x, u, _, rng = _instance(seed=7)
    cache = forward(params, x, u)
    x_tilde = rng.standard_normal(dims.q)
    x_tilde /= np.linalg.norm(x_tilde)
    got = tangent_propagate(params, x, x_tilde, u, cache.x_next)
    exact = jac_state_x(params, cache.z) @ x_tilde
    assert np.linalg.norm(got - exact) <= 1e-4 * max(np.linalg.norm(exact), 1e-12)


def test_tangent_propagate_linear_region():
    # With tiny weights the state map is nearly linear: result ~ W_a x_tilde.
    dims = RnnDims(q=6, m=4, p=3)
    params = init_params(dims, sigma_init=1e-4, seed=8)
    rng = np.random.default_rng(9)
    x = 1e-4 * rng.standard_normal(dims.q)
    u = 1e-4 * rng.standard_normal(dims.m + 1)
    x_tilde = rng.standard_normal(dims.q)
    cache = forward(params, x, u)
    got = tangent_propagate(params, x, x_tilde, u, cache.x_next)
    assert np.linalg.norm(got - params.w_a @ x_tilde) <= 1e-6


def test_tangent_propagate_rejects_bad_eps():
    dims, params, x, u, _, _ = _instance()
    cache = forward(params, x, u)
    with pytest.raises(ValueError):
        tangent_propagate(params, x, np.zeros(dims.q), u, cache.x_next, eps_prop=0.0)


# -------------------------- uoro_step -------------------------------------


def test_uoro_step_zero_learning_rate():
    dims, params, x, u, y_star, rng = _instance(seed=10)
    hyper = UoroHyper(eta=1e-300, tau=2.0, sigma_init=0.02, L=2, q=dims.q)
    result = uoro_step(params, x, init_memory(dims), u, y_star, hyper, rng)
    cache = forward(params, x, u)
    assert np.allclose(result.params.w_a, params.w_a, atol=1e-280)
    assert np.array_equal(result.y, cache.y)
    assert np.array_equal(result.x, cache.x_next)


def test_uoro_step_first_step_gradient_is_delta_theta():
    # Zero memory kills the rank-one term, so the update must be exactly
    # -eta * clip(delta_theta).
    dims, params, x, u, y_star, rng = _instance(seed=11)
    hyper = _hyper(dims, eta=0.25, tau=10.0)
    result = uoro_step(params, x, init_memory(dims), u, y_star, hyper, rng)
    cache = forward(params, x, u)
    e, _ = loss(cache.y, y_star)
    expected = flatten_params(params) - hyper.eta * delta_theta(e, cache.x_next, dims)
    assert np.linalg.norm(delta_theta(e, cache.x_next, dims)) < hyper.tau
    assert np.allclose(flatten_params(result.params), expected, rtol=0, atol=1e-15)


def test_uoro_step_first_step_normalizers_well_defined():
    dims, params, x, u, y_star, rng = _instance(seed=12)
    result = uoro_step(params, x, init_memory(dims), u, y_star, _hyper(dims), rng)
    assert np.isfinite(result.memory.x_tilde).all()
    assert np.isfinite(result.memory.theta_tilde).all()
    assert np.linalg.norm(result.memory.theta_tilde) > 0


def test_uoro_step_sign_flip_symmetry():
    # From zero memory, mirroring nu flips both estimator vectors and
    # leaves their outer product unchanged.
    dims, params, x, u, y_star, _ = _instance(seed=13)
    nu = 2.0 * np.random.default_rng(13).integers(0, 2, size=dims.q) - 1.0
    rng = np.random.default_rng(0)
    plus = uoro_step(params, x, init_memory(dims), u, y_star, _hyper(dims), rng, nu=nu)
    minus = uoro_step(params, x, init_memory(dims), u, y_star, _hyper(dims), rng, nu=-nu)
    assert np.allclose(plus.memory.x_tilde, -minus.memory.x_tilde, atol=1e-12)
    assert np.allclose(plus.memory.theta_tilde, -minus.memory.theta_tilde, atol=1e-12)
    assert np.allclose(
        np.outer(plus.memory.x_tilde, plus.memory.theta_tilde),
        np.outer(minus.memory.x_tilde, minus.memory.theta_tilde),
        atol=1e-12,
    )


def test_uoro_step_gradient_uses_pre_update_memory():
    # The parameter update must combine delta_theta with the INCOMING
    # memory's rank-one term, not the refreshed one.
    dims, params, x, u, y_star, rng = _instance(seed=14)
    x_tilde = rng.standard_normal(dims.q)
    theta_tilde = rng.standard_normal(dims.n_params)
    memory = UoroMemory(x_tilde=x_tilde, theta_tilde=theta_tilde)
    hyper = _hyper(dims, eta=1.0, tau=1e12)
    result = uoro_step(params, x, memory, u, y_star, hyper, rng)
    cache = forward(params, x, u)
    e, _ = loss(cache.y, y_star)
    expected_grad = (grad_x_loss(e, params.w_c) @ x_tilde) * theta_tilde
    expected_grad = expected_grad + delta_theta(e, cache.x_next, dims)
    got_grad = flatten_params(params) - flatten_params(result.params)
    assert np.allclose(got_grad, expected_grad, rtol=1e-10, atol=1e-12)


def test_uoro_step_clips_update_norm():
    dims, params, x, u, y_star, rng = _instance(seed=15)
    y_star = y_star + 50.0
    memory = UoroMemory(
        x_tilde=10.0 * np.ones(dims.q),
        theta_tilde=10.0 * np.ones(dims.n_params),
    )
    hyper = _hyper(dims, eta=1.0, tau=2.0)
    result = uoro_step(params, x, memory, u, y_star, hyper, rng)
    update = flatten_params(params) - flatten_params(result.params)
    assert np.linalg.norm(update) <= hyper.tau * (1 + 1e-12)


def test_uoro_step_estimator_mean_tracks_influence_recursion():
    # Monte-Carlo oracle: seed the memory with an exact rank-one influence
    # matrix, resample nu many times, and compare the averaged outer
    # product against the exact one-step influence recursion.
    q, n_m, L = 3, 1, 2
    m = 3 * n_m * L
    dims = RnnDims(q=q, m=m, p=3 * n_m)
    params = init_params(dims, sigma_init=0.5, seed=20)
    rng = np.random.default_rng(21)
    x = np.tanh(rng.standard_normal(q))
    u = rng.standard_normal(m + 1)
    u[0] = 1.0
    y_star = rng.standard_normal(dims.p)
    x_tilde = rng.standard_normal(q)
    theta_tilde = rng.standard_normal(dims.n_params)
    memory = UoroMemory(x_tilde=x_tilde, theta_tilde=theta_tilde)
    influence = np.outer(x_tilde, theta_tilde)

    cache = forward(params, x, u)
    exact_next = jac_state_x(params, cache.z) @ influence
    exact_next += jac_state_theta(x, u, cache.z, dims)

    n_draws = 20_000
    total = np.zeros((q, dims.n_params))
    total_sq = np.zeros((q, dims.n_params))
    hyper = _hyper(dims)
    for _ in range(n_draws):
        result = uoro_step(params, x, memory, u, y_star, hyper, rng)
        sample = np.outer(result.memory.x_tilde, result.memory.theta_tilde)
        total += sample
        total_sq += sample * sample
    mean = total / n_draws
    var = total_sq / n_draws - mean * mean
    se = np.sqrt(np.maximum(var, 0.0) / n_draws)

    deviation = np.abs(mean - exact_next)
    assert (deviation <= 3.0 * se + 1e-3).all()


def test_uoro_step_nonfinite_loss_detected():
    dims = RnnDims(q=4, m=3, p=2)
    params = init_params(dims, sigma_init=1e160, seed=1)
    x = np.zeros(4)
    u = np.ones(4)
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError) as info:
        uoro_step(params, x, init_memory(dims), u, np.zeros(2), _hyper(dims),
                  np.random.default_rng(0))
    assert info.value.quantity == "loss"


def test_uoro_step_nonfinite_gradient_detected():
    dims, params, x, u, y_star, rng = _instance(seed=16)
    memory = UoroMemory(
        x_tilde=np.ones(dims.q),
        theta_tilde=np.full(dims.n_params, np.inf),
    )
    with pytest.raises(NonFiniteError) as info:
        uoro_step(params, x, memory, u, y_star, _hyper(dims), rng)
    assert info.value.quantity == "gradient"


def test_uoro_hyper_rejects_nonpositive():
    with pytest.raises(ValueError):
        UoroHyper(eta=0.0, tau=2.0, sigma_init=0.02, L=10, q=10)
    with pytest.raises(ValueError):
        UoroHyper(eta=0.1, tau=2.0, sigma_init=0.02, L=0, q=10)


def test_uoro_memory_defaults():
    dims = RnnDims(q=3, m=2, p=1)
    memory = init_memory(dims)
    assert np.array_equal(memory.x_tilde, np.zeros(3))
    assert np.array_equal(memory.theta_tilde, np.zeros(dims.n_params))
    assert memory.eps_norm == EPS_NORM == 1e-7
    assert memory.eps_prop == 1e-7
