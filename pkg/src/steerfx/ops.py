"""Differentiable layer kernels with hand-written backward passes.

Feature maps are plain ndarrays shaped (channels, frames). Every forward
here has a matching backward returning analytic gradients; the pairs are
validated against central finite differences in the test suite. All
functions are pure and deterministic; Adam mutates its state in place.

Causal convolution contract: the input is zero-padded on the left by
dilation*(kernel_size-1) so output length equals input length and
y[:, n] never reads x[:, m] for m > n.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConvKernel:
    """Dilated 1-D convolution parameters: weights (out, in, k) plus bias (out,)."""

    weights: np.ndarray
    bias: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 3:
            raise ValueError(f"weights must be (out, in, k), got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} output channels"
            )
        if self.kernel_size < 1 or self.dilation < 1:
            raise ValueError("kernel_size and dilation must be >= 1")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel_size - 1)


def _check_feature_map(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"feature map must be (channels, frames), got shape {x.shape}")
    return x


def _pad_left(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    out = np.zeros((x.shape[0], x.shape[1] + pad), dtype=x.dtype)
    out[:, pad:] = x
    return out


def _tap_matrix(xp: np.ndarray, k: ConvKernel, n: int) -> np.ndarray:
    # Stack the K dilated tap views into one (K * C_in, n) matrix so the
    # whole convolution is a single GEMM. Row t * C_in + i holds
    # x[i, . - d*(K-1-t)]. K == 1 needs no stacking (and no copy).
    if k.kernel_size == 1:
        return xp
    d = k.dilation
    return np.concatenate([xp[:, t * d : t * d + n] for t in range(k.kernel_size)], axis=0)


def conv1d_causal_fwd(x: np.ndarray, k: ConvKernel) -> np.ndarray:
    """y[o, n] = bias[o] + sum_{i,t} w[o,i,t] * x[i, n - d*(K-1-t)], left zero-padded."""
    x = _check_feature_map(x)
    if x.shape[0] != k.in_channels:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {k.in_channels}")
    n = x.shape[1]
    xs = _tap_matrix(_pad_left(x, k.padding), k, n)
    w2 = k.weights.transpose(0, 2, 1).reshape(k.out_channels, -1)
    return w2 @ xs + k.bias[:, np.newaxis]


def conv1d_causal_bwd(
    x: np.ndarray, k: ConvKernel, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(grad_out * conv1d_causal_fwd(x, k)) w.r.t. x, weights, bias."""
    x = _check_feature_map(x)
    grad_out = _check_feature_map(grad_out)
    n = x.shape[1]
    if grad_out.shape != (k.out_channels, n):
        raise ValueError(f"grad_out shape {grad_out.shape} != ({k.out_channels}, {n})")
    xp = _pad_left(x, k.padding)
    xs = _tap_matrix(xp, k, n)
    grad_b = grad_out.sum(axis=1)
    grad_w = (grad_out @ xs.T).reshape(k.out_channels, k.kernel_size, k.in_channels)
    grad_w = np.ascontiguousarray(grad_w.transpose(0, 2, 1))
    grad_xs = k.weights.transpose(0, 2, 1).reshape(k.out_channels, -1).T @ grad_out
    if k.kernel_size == 1:
        return grad_xs, grad_w, grad_b
    grad_xp = np.zeros_like(xp)
    d, c_in = k.dilation, k.in_channels
    for t in range(k.kernel_size):
        grad_xp[:, t * d : t * d + n] += grad_xs[t * c_in : (t + 1) * c_in]
    return grad_xp[:, k.padding :], grad_w, grad_b


def film_fwd(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-channel affine modulation: y[c, n] = gamma[c] * x[c, n] + beta[c]."""
    x = _check_feature_map(x)
    gamma = np.asarray(gamma)
    beta = np.asarray(beta)
    if gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise ValueError(
            f"gamma/beta must have one entry per channel ({x.shape[0]}), "
            f"got {gamma.shape} and {beta.shape}"
        )
    return gamma[:, np.newaxis] * x + beta[:, np.newaxis]


def film_bwd(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = _check_feature_map(x)
    grad_out = _check_feature_map(grad_out)
    if grad_out.shape != x.shape:
        raise ValueError(f"grad_out shape {grad_out.shape} != {x.shape}")
    grad_x = np.asarray(gamma)[:, np.newaxis] * grad_out
    grad_gamma = (grad_out * x).sum(axis=1)
    grad_beta = grad_out.sum(axis=1)
    return grad_x, grad_gamma, grad_beta


def linear_fwd(c: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine projection w @ c + b (conditioning vector to FiLM gamma/beta halves)."""
    c = np.asarray(c)
    w = np.asarray(w)
    b = np.asarray(b)
    if c.ndim != 1 or w.ndim != 2 or w.shape[1] != c.shape[0] or b.shape != (w.shape[0],):
        raise ValueError(f"shape mismatch: c {c.shape}, w {w.shape}, b {b.shape}")
    return w @ c + b


def linear_bwd(
    c: np.ndarray, w: np.ndarray, b: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = np.asarray(c)
    w = np.asarray(w)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (w.shape[0],):
        raise ValueError(f"grad_out shape {grad_out.shape} != ({w.shape[0]},)")
    grad_c = w.T @ grad_out
    grad_w = np.outer(grad_out, c)
    grad_b = grad_out.copy()
    return grad_c, grad_w, grad_b


def prelu_fwd(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """y = x for x >= 0, else slopes[c] * x (per-channel slope)."""
    x = _check_feature_map(x)
    slopes = np.asarray(slopes)
    if slopes.shape != (x.shape[0],):
        raise ValueError(f"slopes must have one entry per channel, got {slopes.shape}")
    return np.where(x >= 0, x, slopes[:, np.newaxis] * x)


def prelu_bwd(
    x: np.ndarray, slopes: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    # The kink at x == 0 takes the positive branch (fixed subgradient).
    x = _check_feature_map(x)
    grad_out = _check_feature_map(grad_out)
    if grad_out.shape != x.shape:
        raise ValueError(f"grad_out shape {grad_out.shape} != {x.shape}")
    negative = x < 0
    grad_x = np.where(negative, np.asarray(slopes)[:, np.newaxis] * grad_out, grad_out)
    grad_slopes = np.where(negative, grad_out * x, 0).sum(axis=1)
    return grad_x, grad_slopes


@dataclass
class AdamState:
    """Adam moment buffers for a parameter list, one entry per tensor."""

    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(params: list, grads: list, state: AdamState, lr: float) -> None:
    """One Adam update with bias correction; params and state mutate in place."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads, and state must have matching lengths")
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter tensor {i}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / bias1
        v_hat = v / bias2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
