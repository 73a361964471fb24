"""Vanilla single-hidden-layer RNN shared by all online trainers.

The network keeps a hidden state x of size q, reads an input u of size m+1
(leading entry is a constant 1 for the bias) and emits a prediction y of
size p:

    z      = W_a x + W_b u
    x_next = tanh(z)
    y      = W_c x_next

Trainers treat the three weight matrices as one flat parameter vector
theta = [W_a | W_b | W_c], each matrix unrolled column by column
(column-major). Every trainer in this package uses the same
flatten/unflatten pair so that gradient indices never drift.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "NonFiniteError",
    "RnnDims",
    "RnnParams",
    "StepCache",
    "init_params",
    "forward",
    "loss",
    "tanh_prime",
    "clip_gradient",
    "flatten_params",
    "unflatten_params",
    "save_params",
    "load_params",
]


class NonFiniteError(FloatingPointError):
    """A trainer produced a NaN or infinity.

    `quantity` names the first non-finite intermediate so that divergence
    reports can say what blew up, not just that something did.
    """

    def __init__(self, quantity: str):
        super().__init__(f"non-finite values in '{quantity}'")
        self.quantity = quantity


@dataclass(frozen=True)
class RnnDims:
    """Sizes of the network: q hidden units, m signal inputs, p outputs.

    The input vector has m+1 entries (constant bias first), so the total
    parameter count is q*q + q*(m+1) + p*q = q*(p+q+m+1).
    """

    q: int
    m: int
    p: int

    def __post_init__(self):
        if self.q < 1 or self.m < 1 or self.p < 1:
            raise ValueError(f"all dimensions must be >= 1, got {self}")

    @property
    def n_wa(self) -> int:
        return self.q * self.q

    @property
    def n_wb(self) -> int:
        return self.q * (self.m + 1)

    @property
    def n_wc(self) -> int:
        return self.p * self.q

    @property
    def n_params(self) -> int:
        return self.q * (self.p + self.q + self.m + 1)


@dataclass(frozen=True)
class RnnParams:
    """Weight matrices W_a (q x q), W_b (q x (m+1)), W_c (p x q).

    Treated as immutable: trainers never write into the arrays, they build
    new instances from an updated flat parameter vector.
    """

    w_a: np.ndarray
    w_b: np.ndarray
    w_c: np.ndarray

    @property
    def dims(self) -> RnnDims:
        q = self.w_a.shape[0]
        return RnnDims(q=q, m=self.w_b.shape[1] - 1, p=self.w_c.shape[0])


@dataclass(frozen=True)
class StepCache:
    """Intermediates of one forward step: pre-activation z, new hidden
    state x_next = tanh(z), and prediction y = W_c x_next."""

    z: np.ndarray
    x_next: np.ndarray
    y: np.ndarray


def init_params(dims: RnnDims, sigma_init: float, seed: int) -> RnnParams:
    """Draw every weight i.i.d. from N(0, sigma_init^2).

    Matrices are drawn in the order W_a, W_b, W_c from a single
    `numpy.random.default_rng(seed)` stream, so a given seed always yields
    the same network.
    """
    if not sigma_init > 0:
        raise ValueError(f"sigma_init must be > 0, got {sigma_init}")
    rng = np.random.default_rng(seed)
    w_a = sigma_init * rng.standard_normal((dims.q, dims.q))
    w_b = sigma_init * rng.standard_normal((dims.q, dims.m + 1))
    w_c = sigma_init * rng.standard_normal((dims.p, dims.q))
    return RnnParams(w_a=w_a, w_b=w_b, w_c=w_c)


def forward(params: RnnParams, x: np.ndarray, u: np.ndarray) -> StepCache:
    """One step of the state and measurement maps."""
    q = params.w_a.shape[0]
    if x.shape != (q,):
        raise ValueError(f"state has shape {x.shape}, expected ({q},)")
    if u.shape != (params.w_b.shape[1],):
        raise ValueError(
            f"input has shape {u.shape}, expected ({params.w_b.shape[1]},)"
        )
    z = params.w_a @ x + params.w_b @ u
    x_next = np.tanh(z)
    y = params.w_c @ x_next
    return StepCache(z=z, x_next=x_next, y=y)


def loss(y: np.ndarray, y_star: np.ndarray) -> tuple[np.ndarray, float]:
    """Instantaneous square loss: e = y* - y, L = 0.5 * ||e||^2."""
    if y.shape != y_star.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_star.shape}")
    e = y_star - y
    return e, 0.5 * float(e @ e)


def tanh_prime(z: np.ndarray) -> np.ndarray:
    """Elementwise derivative of tanh: 1 - tanh(z)^2."""
    t = np.tanh(z)
    return 1.0 - t * t


def clip_gradient(g: np.ndarray, tau: float) -> np.ndarray:
    """Rescale g to Euclidean norm tau when ||g|| > tau, else return g as is
    (same array, no copy). The clipped norm never exceeds tau, even under
    floating-point rounding of the rescaling."""
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    norm = float(np.linalg.norm(g))
    if norm > tau:
        clipped = g * (tau / norm)
        # Rounding of the rescaling can overshoot tau by an ulp; nudging
        # toward just below tau strictly shrinks the vector each pass, so
        # this terminates (in practice after at most one pass).
        below_tau = float(np.nextafter(tau, 0.0))
        excess = float(np.linalg.norm(clipped))
        while excess > tau:
            clipped *= below_tau / excess
            excess = float(np.linalg.norm(clipped))
        return clipped
    return g


def flatten_params(params: RnnParams) -> np.ndarray:
    """Unroll [W_a | W_b | W_c] into one vector, each matrix column-major."""
    return np.concatenate(
        [
            params.w_a.ravel(order="F"),
            params.w_b.ravel(order="F"),
            params.w_c.ravel(order="F"),
        ]
    )


def unflatten_params(theta: np.ndarray, dims: RnnDims) -> RnnParams:
    """Inverse of `flatten_params`. The matrices are views into `theta`."""
    if theta.shape != (dims.n_params,):
        raise ValueError(
            f"theta has shape {theta.shape}, expected ({dims.n_params},)"
        )
    a_end = dims.n_wa
    b_end = a_end + dims.n_wb
    w_a = theta[:a_end].reshape((dims.q, dims.q), order="F")
    w_b = theta[a_end:b_end].reshape((dims.q, dims.m + 1), order="F")
    w_c = theta[b_end:].reshape((dims.p, dims.q), order="F")
    return RnnParams(w_a=w_a, w_b=w_b, w_c=w_c)


# Checkpoint format: little-endian header of three int64 (q, m, p) followed
# by the flat parameter vector as little-endian float64.
_HEADER = struct.Struct("<3q")


def save_params(path: str | Path, params: RnnParams) -> None:
    dims = params.dims
    theta = flatten_params(params).astype("<f8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(dims.q, dims.m, dims.p))
        f.write(theta.tobytes())


def load_params(path: str | Path) -> RnnParams:
    with open(path, "rb") as f:
        q, m, p = _HEADER.unpack(f.read(_HEADER.size))
        dims = RnnDims(q=q, m=m, p=p)
        theta = np.frombuffer(f.read(), dtype="<f8").astype(np.float64)
    if theta.shape != (dims.n_params,):
        raise ValueError(
            f"checkpoint holds {theta.size} weights, expected {dims.n_params}"
        )
    return unflatten_params(theta, dims)
