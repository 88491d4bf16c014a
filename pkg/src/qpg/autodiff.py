"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Small tape-based engine: each Tensor remembers its parents and a closure
that pushes the output gradient back to them.  Designed for the tiny
fully-connected / temporal-convolution networks used here, so everything
is dense and no broadcasting beyond bias rows is supported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError, UsageError


class Tensor:
    """Node in the computation graph holding a float64 ndarray."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self):
        """Backward sweep from a scalar node; each node visited exactly once."""
        if self.value.ndim != 0 and self.value.size != 1:
            raise UsageError("backward() requires a scalar loss node")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node.parents:
                visit(p)
            order.append(node)

        visit(self)
        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # ---- ops ----

    def __add__(self, other):
        other = _as_tensor(other)
        if self.value.shape[-1:] != other.value.shape[-1:]:
            raise ConfigError(
                f"add: trailing dims differ {self.shape} vs {other.shape}")
        out_val = self.value + other.value

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.value.shape))
            other._accumulate(_unbroadcast(g, other.value.shape))

        return Tensor(out_val, (self, other), bwd)

    def __sub__(self, other):
        other = _as_tensor(other)
        out_val = self.value - other.value

        def bwd(g):
            self._accumulate(_unbroadcast(g, self.value.shape))
            other._accumulate(_unbroadcast(-g, other.value.shape))

        return Tensor(out_val, (self, other), bwd)

    def __mul__(self, other):
        other = _as_tensor(other)
        out_val = self.value * other.value

        def bwd(g):
            self._accumulate(_unbroadcast(g * other.value, self.value.shape))
            other._accumulate(_unbroadcast(g * self.value, other.value.shape))

        return Tensor(out_val, (self, other), bwd)

    def matmul(self, w: "Tensor") -> "Tensor":
        if self.value.shape[-1] != w.value.shape[0]:
            raise ConfigError(
                f"matmul: inner dims do not conform {self.shape} @ {w.shape}")
        out_val = self.value @ w.value

        def bwd(g):
            self._accumulate(g @ w.value.T)
            gw = np.tensordot(self.value, g,
                              axes=(tuple(range(self.value.ndim - 1)),
                                    tuple(range(g.ndim - 1))))
            w._accumulate(gw)

        return Tensor(out_val, (self, w), bwd)

    def tanh(self):
        out_val = np.tanh(self.value)

        def bwd(g):
            self._accumulate(g * (1.0 - out_val * out_val))

        return Tensor(out_val, (self,), bwd)

    def relu(self):
        out_val = np.maximum(self.value, 0.0)

        def bwd(g):
            self._accumulate(g * (self.value > 0.0))

        return Tensor(out_val, (self,), bwd)

    def square(self):
        out_val = self.value * self.value

        def bwd(g):
            self._accumulate(2.0 * g * self.value)

        return Tensor(out_val, (self,), bwd)

    def sum(self):
        out_val = np.asarray(self.value.sum())

        def bwd(g):
            self._accumulate(np.full_like(self.value, float(g)))

        return Tensor(out_val, (self,), bwd)

    def mean(self):
        n = self.value.size
        out_val = np.asarray(self.value.mean())

        def bwd(g):
            self._accumulate(np.full_like(self.value, float(g) / n))

        return Tensor(out_val, (self,), bwd)

    def reshape(self, *shape):
        old = self.value.shape
        out_val = self.value.reshape(*shape)

        def bwd(g):
            self._accumulate(g.reshape(old))

        return Tensor(out_val, (self,), bwd)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient over leading dims introduced by broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


ACTIVATIONS = ("tanh", "relu", "identity")


def forward_dense(x: Tensor, weights: Tensor, bias: Tensor,
                  activation: str = "identity") -> Tensor:
    """Affine map plus elementwise activation: act(x @ W + b)."""
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    out = x.matmul(weights) + bias
    if activation == "tanh":
        out = out.tanh()
    elif activation == "relu":
        out = out.relu()
    return out


def sliding_windows(x: Tensor, kernel_size: int) -> Tensor:
    """Stack causal windows along the time axis (valid padding).

    Input (..., T, C) -> output (..., T-k+1, k*C).  Feeding the result to
    forward_dense with a (k*C, out) weight performs a 1-D temporal
    convolution.
    """
    t_ext = x.value.shape[-2]
    c = x.value.shape[-1]
    if t_ext < kernel_size:
        raise ConfigError(
            f"time extent {t_ext} shorter than kernel size {kernel_size}")
    n_pos = t_ext - kernel_size + 1
    parts = [x.value[..., t:t + kernel_size, :] for t in range(n_pos)]
    out_val = np.stack(parts, axis=-3).reshape(
        x.value.shape[:-2] + (n_pos, kernel_size * c))

    def bwd(g):
        g = g.reshape(x.value.shape[:-2] + (n_pos, kernel_size, c))
        gx = np.zeros_like(x.value)
        for t in range(n_pos):
            gx[..., t:t + kernel_size, :] += g[..., t, :, :]
        x._accumulate(gx)

    return Tensor(out_val, (x,), bwd)


def forward_temporal_conv(x: Tensor, kernel: Tensor, kernel_size: int,
                          activation: str = "identity") -> Tensor:
    """Causal valid-padding 1-D convolution over the time axis.

    `kernel` has shape (kernel_size * channels, out_channels).
    """
    return forward_dense(sliding_windows(x, kernel_size), kernel,
                         Tensor(np.zeros(kernel.value.shape[-1])), activation)


def gather_log_softmax(logits: Tensor, index) -> Tensor:
    """Log-softmax of `logits` at `index`, batched over leading dims.

    logits (..., n), index (...) integer -> output (...).
    """
    v = logits.value
    m = v.max(axis=-1, keepdims=True)
    z = v - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True)) + m
    idx = np.asarray(index)
    picked = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    out_val = picked - lse[..., 0]
    probs = np.exp(v - lse)

    def bwd(g):
        gl = -probs * g[..., None]
        np.put_along_axis(gl, idx[..., None],
                          np.take_along_axis(gl, idx[..., None], axis=-1)
                          + g[..., None], axis=-1)
        logits._accumulate(gl)

    return Tensor(out_val, (logits,), bwd)


def gaussian_log_density(mean: Tensor, sample, sigma: float) -> Tensor:
    """Log N(sample; mean, sigma^2 I) summed over the last axis."""
    z = np.asarray(sample, dtype=np.float64)
    diff = z - mean.value
    n = z.shape[-1]
    out_val = (-0.5 * (diff * diff).sum(axis=-1) / sigma**2
               - 0.5 * n * np.log(2.0 * np.pi * sigma**2))

    def bwd(g):
        mean._accumulate(g[..., None] * diff / sigma**2)

    return Tensor(out_val, (mean,), bwd)


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment accumulators for one flat vector."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None
    lr_scale: float = 1.0

    def _init_like(self, params):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        elif self.m.shape != params.shape:
            raise ConfigError("AdamState accumulators do not match params")


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray,
              maximize: bool = False) -> np.ndarray:
    """One Adam update; returns the new parameter vector."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient in adam_step")
    if grad.shape != params.shape:
        raise ConfigError("gradient shape does not match params")
    if maximize:
        grad = -grad
    state._init_like(params)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1 ** state.step)
    vhat = state.v / (1.0 - state.beta2 ** state.step)
    lr = state.lr * state.lr_scale
    return params - lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class FlatParams:
    """One flat float64 parameter vector with named layer views.

    Layers reserve slices at construction time; `view` returns an ndarray
    view into the flat storage so optimizer updates (in place on `theta`)
    are immediately visible to every layer.
    """

    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grad: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _spans: list = field(default_factory=list)

    def allocate(self, shape) -> int:
        n = int(np.prod(shape))
        start = self.theta.size
        self.theta = np.concatenate([self.theta, np.zeros(n)])
        self.grad = np.zeros_like(self.theta)
        self._spans.append((start, shape))
        return len(self._spans) - 1

    def view(self, handle: int) -> np.ndarray:
        start, shape = self._spans[handle]
        n = int(np.prod(shape))
        return self.theta[start:start + n].reshape(shape)

    def grad_view(self, handle: int) -> np.ndarray:
        start, shape = self._spans[handle]
        n = int(np.prod(shape))
        return self.grad[start:start + n].reshape(shape)

    @property
    def size(self) -> int:
        return self.theta.size

    def zero_grad(self):
        self.grad[:] = 0.0

    def param_tensor(self, handle: int) -> Tensor:
        """Leaf tensor whose backward writes into the flat grad vector."""
        sink = self.grad_view(handle)
        t = Tensor(self.view(handle))

        def bwd(g):
            sink[...] += g

        t._backward = bwd
        return t
