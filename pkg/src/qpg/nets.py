"""Tiny feed-forward and temporal-convolution networks on FlatParams.

Networks describe themselves with a serializable `arch` list so parameter
snapshots can be checkpointed as a flat vector plus an architecture header.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import (FlatParams, Tensor, forward_dense, sliding_windows)
from .errors import ConfigError


def fan_in_uniform(rng: np.random.Generator, shape, fan_in=None) -> np.ndarray:
    """Uniform init scaled by the inverse square root of the fan-in."""
    if fan_in is None:
        fan_in = shape[0]
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class DenseLayer:
    def __init__(self, params: FlatParams, n_in: int, n_out: int,
                 activation: str, rng: np.random.Generator):
        self.activation = activation
        self.w = params.allocate((n_in, n_out))
        self.b = params.allocate((n_out,))
        params.view(self.w)[:] = fan_in_uniform(rng, (n_in, n_out))
        params.view(self.b)[:] = fan_in_uniform(rng, (n_out,), fan_in=n_in)
        self.params = params
        self.spec = {"kind": "dense", "in": n_in, "out": n_out,
                     "activation": activation}

    def __call__(self, x: Tensor) -> Tensor:
        return forward_dense(x, self.params.param_tensor(self.w),
                             self.params.param_tensor(self.b), self.activation)


class TemporalConvLayer:
    """Valid-padding 1-D convolution over the time axis of (..., T, C)."""

    def __init__(self, params: FlatParams, kernel_size: int, n_in: int,
                 n_out: int, activation: str, rng: np.random.Generator):
        self.kernel_size = kernel_size
        self.activation = activation
        self.w = params.allocate((kernel_size * n_in, n_out))
        self.b = params.allocate((n_out,))
        params.view(self.w)[:] = fan_in_uniform(rng, (kernel_size * n_in, n_out))
        params.view(self.b)[:] = fan_in_uniform(rng, (n_out,),
                                                fan_in=kernel_size * n_in)
        self.params = params
        self.spec = {"kind": "conv", "kernel": kernel_size, "in": n_in,
                     "out": n_out, "activation": activation}

    def __call__(self, x: Tensor) -> Tensor:
        win = sliding_windows(x, self.kernel_size)
        return forward_dense(win, self.params.param_tensor(self.w),
                             self.params.param_tensor(self.b), self.activation)


class Network:
    """A sequential trunk plus one or more parallel dense heads."""

    def __init__(self):
        self.params = FlatParams()
        self.trunk = []
        self.heads = []

    @staticmethod
    def mlp(n_in: int, hidden, n_outs, rng, activation: str = "tanh"
            ) -> "Network":
        """Fully connected trunk with parallel linear output heads.

        `n_outs` is a list; each entry becomes one head.
        """
        net = Network()
        prev = n_in
        for width in hidden:
            net.trunk.append(DenseLayer(net.params, prev, width, activation, rng))
            prev = width
        for n_out in n_outs:
            net.heads.append(DenseLayer(net.params, prev, n_out, "identity", rng))
        return net

    @staticmethod
    def temporal_conv(time_ext: int, n_channels: int, conv_channels,
                      kernel_size: int, n_outs, rng,
                      activation: str = "tanh") -> "Network":
        """Stack of temporal convolutions collapsing the time axis, then heads.

        Valid padding must consume the whole lookback window so the trunk
        output is a flat feature vector.
        """
        net = Network()
        t, c = time_ext, n_channels
        for out_c in conv_channels:
            net.trunk.append(TemporalConvLayer(net.params, kernel_size, c,
                                               out_c, activation, rng))
            t = t - kernel_size + 1
            c = out_c
        if t != 1:
            raise ConfigError(
                f"conv stack leaves {t} time positions; expected exactly 1")
        net._flatten_to = c
        for n_out in n_outs:
            net.heads.append(DenseLayer(net.params, c, n_out, "identity", rng))
        return net

    def forward(self, x: Tensor):
        """Returns the list of head outputs (Tensors)."""
        h = x
        for layer in self.trunk:
            h = layer(h)
        if h.value.ndim >= 2 and any(
                isinstance(l, TemporalConvLayer) for l in self.trunk):
            h = h.reshape(h.value.shape[:-2] + (h.value.shape[-1],))
        return [head(h) for head in self.heads]

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    @property
    def arch(self):
        return [l.spec for l in self.trunk] + [h.spec for h in self.heads]

    def state_header(self) -> str:
        return json.dumps(self.arch)
