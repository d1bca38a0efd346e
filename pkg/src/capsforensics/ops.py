"""Network operations on Tensors: convolution, pooling, normalization,
softmax, and dropout.

Convolutions use cross-correlation semantics (no kernel flip) and
channel-first layout. Every spatial op accepts the unbatched layouts
([C,H,W] / [C,L]) as well as their batched counterparts with a leading
sample axis, returning the matching rank.
"""

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError
from .tensor import Tensor, accumulate, as_tensor, from_op

_guided_mode = False


@contextlib.contextmanager
def guided_gradients():
    """Guided-backprop rule for relu while active: the backward pass keeps
    only positive gradients flowing through positive activations."""
    global _guided_mode
    prev = _guided_mode
    _guided_mode = True
    try:
        yield
    finally:
        _guided_mode = prev


def relu(x):
    """Elementwise max(x, 0).

    Backward passes gradient where x > 0; under ``guided_gradients()``
    the incoming gradient is additionally zeroed where it is negative.
    """
    x = as_tensor(x)
    mask = x.data > 0

    def grad_fn(g):
        if _guided_mode:
            g = g * (g > 0)
        accumulate(x, g * mask)

    return from_op(np.where(mask, x.data, 0), (x,), grad_fn)


def softmax(x, axis=-1):
    """Exp-normalize along ``axis``, stabilized by max subtraction.

    Each slice along the axis sums to 1 and lies in (0, 1).
    """
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        accumulate(x, (g - inner) * y)

    return from_op(y, (x,), grad_fn)


def dropout(x, p, mode, rng=None):
    """Inverted dropout: zero each element with probability ``p`` and
    scale survivors by 1/(1-p) in train mode; identity in infer mode."""
    if not 0.0 <= p < 1.0:
        raise ParameterError("dropout probability must satisfy 0 <= p < 1, got %r" % (p,))
    _check_mode(mode)
    x = as_tensor(x)
    if mode == "infer" or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs an RngStream")
    keep = (rng.uniform(x.shape, dtype=np.float64) >= p)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    factor = keep * scale

    def grad_fn(g):
        accumulate(x, g * factor)

    return from_op(x.data * factor, (x,), grad_fn)


def _check_mode(mode):
    if mode not in ("train", "infer"):
        raise ParameterError("mode must be 'train' or 'infer', got %r" % (mode,))


# -- convolution ----------------------------------------------------------------


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation.

    x: [C_in,H,W] or [N,C_in,H,W]; weight: [C_out,C_in,kH,kW]; bias: [C_out].
    Output spatial size is floor((S + 2*padding - k)/stride) + 1 per axis.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if stride < 1:
        raise ParameterError("stride must be >= 1, got %d" % stride)
    if padding < 0:
        raise ParameterError("padding must be >= 0, got %d" % padding)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            "conv2d expects 4-D input/kernel, got input %r kernel %r"
            % (x.shape, weight.shape))
    n, c_in, h, w = x.shape
    c_out, kc, kh, kw = weight.shape
    if kc != c_in:
        raise DimensionError(
            "conv2d channel mismatch: input axis 1 has %d channels, kernel axis 1 has %d"
            % (c_in, kc))
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(
            "conv2d kernel %dx%d exceeds padded input %dx%d"
            % (kh, kw, h + 2 * padding, w + 2 * padding))

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1

    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    cols = cols.reshape(n * h_out * w_out, c_in * kh * kw)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(
                "conv2d bias shape %r does not match %d output channels"
                % (bias.shape, c_out))
        out = out + bias.data
    out = out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * h_out * w_out, c_out)
        if weight.requires_grad:
            accumulate(weight, (gmat.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, h_out, w_out, c_in, kh, kw)
            gxp = np.zeros(
                (n, c_in, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, :, di:di + h_out * stride:stride,
                        dj:dj + w_out * stride:stride] += \
                        gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            accumulate(x, gxp)

    result = from_op(out, parents, grad_fn)
    return result.reshape(result.shape[1:]) if squeeze else result


def conv1d(x, weight, bias=None, stride=1):
    """1-D cross-correlation.

    x: [C_in,L] or [N,C_in,L]; weight: [C_out,C_in,k]; bias: [C_out].
    Output length is floor((L - k)/stride) + 1.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if stride < 1:
        raise ParameterError("stride must be >= 1, got %d" % stride)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError(
            "conv1d expects 3-D input/kernel, got input %r kernel %r"
            % (x.shape, weight.shape))
    n, c_in, length = x.shape
    c_out, kc, k = weight.shape
    if kc != c_in:
        raise DimensionError(
            "conv1d channel mismatch: input axis 1 has %d channels, kernel axis 1 has %d"
            % (c_in, kc))
    if k > length:
        raise DimensionError(
            "conv1d kernel size %d exceeds input length %d" % (k, length))

    l_out = (length - k) // stride + 1
    win = sliding_window_view(x.data, k, axis=2)[:, :, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * l_out, c_in * k)
    wmat = weight.data.reshape(c_out, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(
                "conv1d bias shape %r does not match %d output channels"
                % (bias.shape, c_out))
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, l_out, c_out).transpose(0, 2, 1))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        gmat = g.transpose(0, 2, 1).reshape(n * l_out, c_out)
        if weight.requires_grad:
            accumulate(weight, (gmat.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, l_out, c_in, k)
            gx = np.zeros_like(x.data)
            for d in range(k):
                gx[:, :, d:d + l_out * stride:stride] += gcols[:, :, :, d].transpose(0, 2, 1)
            accumulate(x, gx)

    result = from_op(out, parents, grad_fn)
    return result.reshape(result.shape[1:]) if squeeze else result


def maxpool2d(x, k, stride=None):
    """Max pooling over k x k windows; backward routes each window's
    gradient to its argmax element only (first maximum on ties)."""
    x = as_tensor(x)
    if stride is None:
        stride = k
    if stride < 1 or k < 1:
        raise ParameterError("pool size and stride must be >= 1")
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    n, c, h, w = x.shape
    if k > h or k > w:
        raise DimensionError(
            "maxpool2d window %d exceeds input %dx%d" % (k, h, w))
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1

    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = np.ascontiguousarray(win).reshape(n, c, h_out, w_out, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        if not x.requires_grad:
            return
        ni, ci, oi, oj = np.indices((n, c, h_out, w_out), sparse=True)
        rows = oi * stride + arg // k
        cols = oj * stride + arg % k
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.broadcast_to(ni, arg.shape),
                       np.broadcast_to(ci, arg.shape), rows, cols), g)
        accumulate(x, gx)

    result = from_op(out, (x,), grad_fn)
    return result.reshape(result.shape[1:]) if squeeze else result


# -- batch normalization -----------------------------------------------------------


def batch_norm(x, gamma, beta, running_mean, running_var, mode,
               momentum=0.1, eps=1e-5, channel_axis=1):
    """Normalize per channel; affine-transform with gamma/beta.

    Train mode normalizes by the current batch statistics (population
    variance) and folds them into the running buffers in place; infer
    mode uses the running buffers only and is a pure function.
    ``channel_axis`` selects the channel dimension (1 for batched
    [N,C,...] layouts, 0 for unbatched [C,...]).
    """
    _check_mode(mode)
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    channels = x.shape[channel_axis]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            "batch_norm gamma/beta must have length %d (channel axis %d), got %r and %r"
            % (channels, channel_axis, gamma.shape, beta.shape))
    axes = tuple(a for a in range(x.ndim) if a != channel_axis)
    bshape = tuple(channels if a == channel_axis else 1 for a in range(x.ndim))
    g = gamma.reshape(bshape)
    b = beta.reshape(bshape)

    if mode == "train":
        count = 1
        for a in axes:
            count *= x.shape[a]
        if count == 0:
            raise DimensionError("batch_norm cannot train on an empty batch")
        m = x.mean(axis=axes, keepdims=True)
        centered = x - m
        v = (centered * centered).mean(axis=axes, keepdims=True)
        out = centered / (v + eps).sqrt() * g + b
        running_mean *= (1.0 - momentum)
        running_mean += momentum * m.data.reshape(channels).astype(running_mean.dtype)
        running_var *= (1.0 - momentum)
        running_var += momentum * v.data.reshape(channels).astype(running_var.dtype)
        return out

    rm = running_mean.reshape(bshape)
    rv = running_var.reshape(bshape)
    scale = 1.0 / np.sqrt(rv + eps)
    return (x - rm) * scale * g + b
