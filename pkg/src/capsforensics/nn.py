"""Thin layer wrappers that own named parameter Tensors.

Layers are callables over Tensors; they add nothing beyond parameter
storage, He initialization, and name bookkeeping so checkpoints can
address every array by a stable dotted path.
"""

import numpy as np

from .errors import DimensionError
from .ops import batch_norm, conv1d, conv2d
from .tensor import Tensor


def he_normal(rng, shape, fan_in, dtype=np.float32):
    """Gaussian init scaled by sqrt(2/fan_in) (good defaults for relu)."""
    return rng.normal(shape, std=float(np.sqrt(2.0 / fan_in)), dtype=dtype)


class Conv2d:
    """2-D convolution layer: weight [C_out,C_in,kH,kW] plus optional bias."""

    def __init__(self, in_channels, out_channels, kernel_size, rng,
                 stride=1, padding=0, bias=True, name="conv", dtype=np.float32):
        k = kernel_size
        fan_in = in_channels * k * k
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(he_normal(rng, (out_channels, in_channels, k, k), fan_in,
                                       dtype=dtype),
                             requires_grad=True, name=name + ".weight")
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(out_channels, dtype=dtype),
                               requires_grad=True, name=name + ".bias")

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias,
                      stride=self.stride, padding=self.padding)

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class Conv1d:
    """1-D convolution layer: weight [C_out,C_in,k] plus optional bias."""

    def __init__(self, in_channels, out_channels, kernel_size, rng,
                 stride=1, bias=True, name="conv", dtype=np.float32):
        fan_in = in_channels * kernel_size
        self.stride = stride
        self.weight = Tensor(
            he_normal(rng, (out_channels, in_channels, kernel_size), fan_in,
                      dtype=dtype),
            requires_grad=True, name=name + ".weight")
        self.bias = None
        if bias:
            self.bias = Tensor(np.zeros(out_channels, dtype=dtype),
                               requires_grad=True, name=name + ".bias")

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, stride=self.stride)

    def parameters(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class BatchNorm:
    """Per-channel batch normalization with learnable scale and shift.

    Running mean/variance buffers are plain arrays (not trained); train
    mode updates them in place with momentum 0.1.
    """

    def __init__(self, channels, name="bn", momentum=0.1, eps=1e-5,
                 dtype=np.float32):
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.gamma = Tensor(np.ones(channels, dtype=dtype),
                            requires_grad=True, name=name + ".gamma")
        self.beta = Tensor(np.zeros(channels, dtype=dtype),
                           requires_grad=True, name=name + ".beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x, mode, channel_axis=1):
        return batch_norm(x, self.gamma, self.beta,
                          self.running_mean, self.running_var, mode,
                          momentum=self.momentum, eps=self.eps,
                          channel_axis=channel_axis)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {self.name + ".running_mean": self.running_mean,
                self.name + ".running_var": self.running_var}

    def load_buffers(self, mean, var):
        if mean.shape != self.running_mean.shape or var.shape != self.running_var.shape:
            raise DimensionError(
                "running-stat shape mismatch for %s: got %r/%r, expected %r"
                % (self.name, mean.shape, var.shape, self.running_mean.shape))
        self.running_mean[...] = mean
        self.running_var[...] = var
