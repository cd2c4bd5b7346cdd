"""Float64 array ops with hand-written backward rules, and an Adam optimizer.

Every forward function returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache, accumulates into any
:class:`Parameter` it touched and returns the gradient for its array input(s).
Inputs may carry leading batch axes; the op acts on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError

DTYPE = np.float64


class Parameter:
    """A trainable array together with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter(shape={self.value.shape})"


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# ---------------------------------------------------------------------------
# affine
# ---------------------------------------------------------------------------

def affine(x, W: Parameter, b: Parameter | None):
    """``W @ x + b`` over the last axis of ``x``."""
    x = np.asarray(x, dtype=DTYPE)
    if W.value.ndim != 2 or x.shape[-1] != W.value.shape[1]:
        raise ConfigurationError(
            f"affine: input shape {x.shape} does not conform to weight shape {W.value.shape}")
    if b is not None and b.value.shape != (W.value.shape[0],):
        raise ConfigurationError(
            f"affine: bias shape {b.value.shape} does not conform to weight shape {W.value.shape}")
    y = x @ W.value.T
    if b is not None:
        y = y + b.value
    return y, (x, W, b)


def affine_backward(dy, cache):
    x, W, b = cache
    flat_x = x.reshape(-1, x.shape[-1])
    flat_dy = dy.reshape(-1, dy.shape[-1])
    W.grad += flat_dy.T @ flat_x
    if b is not None:
        b.grad += flat_dy.sum(axis=0)
    return dy @ W.value


def embedding_lookup(indices, W: Parameter):
    """Column lookup ``W @ onehot(i)`` for integer indices; ``W`` is (out, vocab)."""
    indices = np.asarray(indices)
    vocab = W.value.shape[1]
    if indices.size and (indices.min() < 0 or indices.max() >= vocab):
        raise ConfigurationError(f"one-hot index out of range for vocabulary of size {vocab}")
    return W.value.T[indices], (indices, W)


def embedding_lookup_backward(dy, cache):
    indices, W = cache
    gT = np.zeros((W.value.shape[1], W.value.shape[0]), dtype=DTYPE)
    np.add.at(gT, indices.reshape(-1), dy.reshape(-1, dy.shape[-1]))
    W.grad += gT.T


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x):
    y = expit(np.asarray(x, dtype=DTYPE))
    return y, y


def sigmoid_backward(dy, cache):
    y = cache
    return dy * y * (1.0 - y)


def tanh(x):
    y = np.tanh(np.asarray(x, dtype=DTYPE))
    return y, y


def tanh_backward(dy, cache):
    y = cache
    return dy * (1.0 - y * y)


def relu(x):
    x = np.asarray(x, dtype=DTYPE)
    return np.maximum(x, 0.0), x > 0.0


def relu_backward(dy, cache):
    return dy * cache


def softmax(x, mask=None):
    """Normalized exponential over the last axis.

    ``mask`` (same shape, bool) marks the positions that take part; excluded
    positions get exactly zero weight. A row with no active position is an
    error.
    """
    x = np.asarray(x, dtype=DTYPE)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ConfigurationError("softmax: a row has every position masked")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, y


def softmax_backward(dy, cache):
    y = cache
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def l2_distance(a, b):
    """Euclidean distance over the last axis. Subgradient 0 where ``a == b``."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ConfigurationError(f"l2_distance: shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    dist = np.sqrt((diff * diff).sum(axis=-1))
    return dist, (diff, dist)


def l2_distance_backward(dd, cache):
    """Returns the gradients for ``(a, b)``."""
    diff, dist = cache
    safe = np.where(dist > 0.0, dist, 1.0)
    scale = np.where(dist > 0.0, np.asarray(dd, dtype=DTYPE) / safe, 0.0)
    da = diff * scale[..., None]
    return da, -da


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update in place, then zero all gradients."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


def zero_grads(params: Mapping[str, Parameter]) -> None:
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def gradient_check(
    loss_fn: Callable[[bool], float],
    params: Mapping[str, Parameter],
    h: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(backward)`` must evaluate the scalar loss at the current
    parameter values and, when ``backward`` is true, accumulate analytic
    gradients into the parameters. ``max_entries`` limits how many entries per
    parameter are probed (chosen with ``rng``).
    """
    if not 1e-7 <= h <= 1e-4:
        raise ContractError(f"finite-difference step {h} outside [1e-7, 1e-4]")
    zero_grads(params)
    loss = loss_fn(True)
    if np.ndim(loss) != 0:
        raise ContractError("gradient_check needs a scalar-valued forward function")
    analytic = {k: p.grad.copy() for k, p in params.items()}
    zero_grads(params)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        g = analytic[name].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = float(loss_fn(False))
            flat[i] = old - h
            down = float(loss_fn(False))
            flat[i] = old
            cd = (up - down) / (2.0 * h)
            err = abs(g[i] - cd) / max(abs(g[i]), abs(cd), 1e-12)
            worst = max(worst, err)
    return worst
