"""Network ops: convolution, pooling, normalization, softmax, dropout, relu."""

import numpy as np
import pytest

from capsforensics import (
    DimensionError,
    ParameterError,
    RngStream,
    Tensor,
    check_gradients,
)
from capsforensics.ops import (
    batch_norm,
    conv1d,
    conv2d,
    dropout,
    guided_gradients,
    maxpool2d,
    relu,
    softmax,
)


def int_valued(rng, shape, lo=-3, hi=4, dtype=np.float64):
    """Small-integer floats: any summation order gives identical results."""
    return rng.integers(lo, hi, size=shape).astype(dtype)


def naive_conv2d(x, w, b, stride, padding):
    n, c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    for ni in range(n):
        for co in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    patch = xp[ni, :, i * stride:i * stride + kh,
                               j * stride:j * stride + kw]
                    out[ni, co, i, j] = (patch * w[co]).sum()
                    if b is not None:
                        out[ni, co, i, j] += b[co]
    return out


def naive_conv1d(x, w, b, stride):
    n, c_in, length = x.shape
    c_out, _, k = w.shape
    l_out = (length - k) // stride + 1
    out = np.zeros((n, c_out, l_out), dtype=x.dtype)
    for ni in range(n):
        for co in range(c_out):
            for i in range(l_out):
                out[ni, co, i] = (x[ni, :, i * stride:i * stride + k] * w[co]).sum()
                if b is not None:
                    out[ni, co, i] += b[co]
    return out


# -- conv2d -----------------------------------------------------------------------


def test_conv2d_ones_window():
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.ones((1, 1, 2, 2)))
    b = Tensor(np.zeros(1))
    out = conv2d(x, w, b)
    assert out.shape == (1, 2, 2)
    assert np.array_equal(out.data, np.full((1, 2, 2), 4.0))


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(201)
    x = Tensor(rng.standard_normal((2, 5, 4)))
    # one output channel picks input channel 0, the other channel 1
    w = np.zeros((2, 2, 1, 1))
    w[0, 0, 0, 0] = 1.0
    w[1, 1, 0, 0] = 1.0
    out = conv2d(x, Tensor(w))
    assert np.array_equal(out.data, x.data)


def test_conv2d_matches_naive_oracle_exactly():
    rng = np.random.default_rng(202)
    for _ in range(12):
        n = int(rng.integers(1, 3))
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        h = int(rng.integers(3, 9))
        wd = int(rng.integers(3, 9))
        k = int(rng.integers(1, min(4, h, wd) + 1))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        x = int_valued(rng, (n, c_in, h, wd))
        w = int_valued(rng, (c_out, c_in, k, k))
        b = int_valued(rng, (c_out,))
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride,
                     padding=padding)
        want = naive_conv2d(x, w, b, stride, padding)
        assert got.shape == want.shape
        assert np.array_equal(got.data, want)


def test_conv2d_matches_naive_oracle_float():
    rng = np.random.default_rng(203)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    want = naive_conv2d(x, w, b, 2, 1)
    assert np.allclose(got.data, want, atol=1e-12)


def test_conv2d_output_size_formula():
    rng = np.random.default_rng(204)
    for _ in range(10):
        h = int(rng.integers(4, 12))
        wd = int(rng.integers(4, 12))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 4))
        p = int(rng.integers(0, 3))
        out = conv2d(Tensor(np.zeros((1, 2, h, wd))),
                     Tensor(np.zeros((3, 2, k, k))), stride=s, padding=p)
        assert out.shape == (1, 3, (h + 2 * p - k) // s + 1,
                             (wd + 2 * p - k) // s + 1)


def test_conv2d_gradients():
    rng = np.random.default_rng(205)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)), requires_grad=True, name="x")
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True, name="w")
    b = Tensor(rng.standard_normal(4), requires_grad=True, name="b")
    errs = check_gradients(
        lambda: (conv2d(x, w, b, stride=2, padding=1) ** 2).sum(), [x, w, b])
    assert max(errs.values()) < 1e-7


def test_conv2d_names_offending_axis():
    with pytest.raises(DimensionError) as err:
        conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 5, 3, 3))))
    assert "axis 1" in str(err.value)
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


# -- conv1d -----------------------------------------------------------------------


def test_conv1d_sliding_window_fixture():
    out = conv1d(Tensor(np.array([[1.0, 2.0, 3.0, 4.0]])),
                 Tensor(np.array([[[1.0, 1.0]]])), Tensor(np.zeros(1)))
    assert np.array_equal(out.data, [[3.0, 5.0, 7.0]])


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(206)
    x = Tensor(rng.standard_normal((1, 7)))
    out = conv1d(x, Tensor(np.ones((1, 1, 1))))
    assert np.array_equal(out.data, x.data)


def test_conv1d_matches_naive_oracle_exactly():
    rng = np.random.default_rng(207)
    for _ in range(10):
        n = int(rng.integers(1, 3))
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        length = int(rng.integers(3, 12))
        k = int(rng.integers(1, min(5, length) + 1))
        stride = int(rng.integers(1, 3))
        x = int_valued(rng, (n, c_in, length))
        w = int_valued(rng, (c_out, c_in, k))
        b = int_valued(rng, (c_out,))
        got = conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride)
        assert np.array_equal(got.data, naive_conv1d(x, w, b, stride))


def test_conv1d_gradients():
    rng = np.random.default_rng(208)
    x = Tensor(rng.standard_normal((2, 2, 9)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 5)), requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)
    errs = check_gradients(
        lambda: (conv1d(x, w, b, stride=2) ** 2).sum(), [x, w, b])
    assert max(errs.values()) < 1e-7


def test_conv1d_kernel_longer_than_input():
    with pytest.raises(DimensionError):
        conv1d(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 1, 5))))


# -- maxpool2d ---------------------------------------------------------------------


def test_maxpool_window_fixture():
    out = maxpool2d(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])), 2, stride=2)
    assert np.array_equal(out.data, [[[4.0]]])


def test_maxpool_constant_input():
    out = maxpool2d(Tensor(np.full((2, 4, 4), 7.0)), 2)
    assert np.array_equal(out.data, np.full((2, 2, 2), 7.0))


def test_maxpool_gradient_is_argmax_indicator():
    rng = np.random.default_rng(209)
    vals = rng.permutation(2 * 6 * 6).astype(np.float64).reshape(2, 6, 6)
    x = Tensor(vals, requires_grad=True)
    errs = check_gradients(lambda: (maxpool2d(x, 2) * maxpool2d(x, 2)).sum(), [x])
    assert max(errs.values()) < 1e-7
    x2 = Tensor(vals.copy(), requires_grad=True)
    maxpool2d(x2, 2).sum().backward()
    assert x2.grad.sum() == 3 * 3 * 2  # one unit per window
    assert set(np.unique(x2.grad)) == {0.0, 1.0}


def test_maxpool_tie_routes_to_first_maximum():
    x = Tensor(np.array([[[5.0, 5.0], [5.0, 0.0]]]), requires_grad=True)
    maxpool2d(x, 2).sum().backward()
    assert np.array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])


def test_maxpool_default_stride_and_overlap():
    rng = np.random.default_rng(210)
    x = rng.standard_normal((1, 5, 5))
    assert maxpool2d(Tensor(x), 2).shape == (1, 2, 2)
    assert maxpool2d(Tensor(x), 2, stride=1).shape == (1, 4, 4)


def test_maxpool_window_too_large():
    with pytest.raises(DimensionError):
        maxpool2d(Tensor(np.zeros((1, 2, 2))), 3)


# -- batch_norm ---------------------------------------------------------------------


def fresh_bn(channels, dtype=np.float32):
    gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
    beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
    return gamma, beta, np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype)


def test_batch_norm_standardized_input_passes_through():
    rng = np.random.default_rng(211)
    raw = rng.standard_normal((64, 3, 8, 8))
    raw = (raw - raw.mean(axis=(0, 2, 3), keepdims=True)) \
        / raw.std(axis=(0, 2, 3), keepdims=True)
    gamma, beta, rm, rv = fresh_bn(3, dtype=np.float64)
    out = batch_norm(Tensor(raw), gamma, beta, rm, rv, "train")
    assert np.allclose(out.data, raw, atol=1e-4)


def test_batch_norm_constant_input_returns_beta():
    gamma = Tensor(np.ones(2))
    beta = Tensor(np.full(2, 0.5))
    rm, rv = np.zeros(2), np.ones(2)
    out = batch_norm(Tensor(np.full((4, 2, 3), 9.0)), gamma, beta, rm, rv, "train")
    assert np.allclose(out.data, 0.5, atol=1e-6)


def test_batch_norm_train_normalizes_with_population_variance():
    rng = np.random.default_rng(212)
    x = rng.standard_normal((16, 4, 5, 5)) * 3.0 + 1.0
    gamma, beta, rm, rv = fresh_bn(4, dtype=np.float64)
    out = batch_norm(Tensor(x), gamma, beta, rm, rv, "train").data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_batch_norm_running_stats_update():
    rng = np.random.default_rng(213)
    x = rng.standard_normal((8, 3, 4)).astype(np.float32)
    gamma, beta, rm, rv = fresh_bn(3)
    batch_norm(Tensor(x), gamma, beta, rm, rv, "train")
    mean = x.mean(axis=(0, 2), dtype=np.float64)
    var = x.var(axis=(0, 2), dtype=np.float64)
    assert np.allclose(rm, 0.1 * mean, rtol=1e-5)
    assert np.allclose(rv, 0.9 + 0.1 * var, rtol=1e-5)


def test_batch_norm_train_and_infer_converge():
    rng = np.random.default_rng(214)
    x = rng.standard_normal((32, 3, 6)).astype(np.float32)
    gamma = Tensor(np.full(3, 1.5, dtype=np.float32))
    beta = Tensor(np.full(3, 0.5, dtype=np.float32))
    rm, rv = np.zeros(3, dtype=np.float32), np.ones(3, dtype=np.float32)
    for _ in range(300):
        train_out = batch_norm(Tensor(x), gamma, beta, rm, rv, "train")
    infer_out = batch_norm(Tensor(x), gamma, beta, rm, rv, "infer")
    assert np.allclose(infer_out.data, train_out.data, atol=1e-5)


def test_batch_norm_infer_is_pure():
    rng = np.random.default_rng(215)
    x = Tensor(rng.standard_normal((4, 2, 3)).astype(np.float32))
    gamma, beta, rm, rv = fresh_bn(2)
    rm[:] = [0.3, -0.2]
    rv[:] = [1.5, 0.7]
    before = (rm.copy(), rv.copy())
    a = batch_norm(x, gamma, beta, rm, rv, "infer")
    b = batch_norm(x, gamma, beta, rm, rv, "infer")
    assert np.array_equal(a.data, b.data)
    assert np.array_equal(rm, before[0]) and np.array_equal(rv, before[1])


def test_batch_norm_gradients():
    rng = np.random.default_rng(216)
    x = Tensor(rng.standard_normal((6, 3, 4)), requires_grad=True, name="x")
    gamma = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True, name="gamma")
    beta = Tensor(rng.standard_normal(3), requires_grad=True, name="beta")
    rm, rv = np.zeros(3), np.ones(3)
    errs = check_gradients(
        lambda: (batch_norm(x, gamma, beta, rm, rv, "train") ** 2).sum(),
        [x, gamma, beta])
    assert max(errs.values()) < 1e-5


def test_batch_norm_channel_axis_zero():
    rng = np.random.default_rng(217)
    x = rng.standard_normal((3, 20))
    gamma, beta, rm, rv = fresh_bn(3, dtype=np.float64)
    out = batch_norm(Tensor(x), gamma, beta, rm, rv, "train", channel_axis=0)
    assert np.allclose(out.data.mean(axis=1), 0.0, atol=1e-10)


def test_batch_norm_empty_batch_rejected():
    gamma, beta, rm, rv = fresh_bn(3)
    with pytest.raises(DimensionError):
        batch_norm(Tensor(np.zeros((0, 3, 2))), gamma, beta, rm, rv, "train")


def test_batch_norm_shape_validation():
    gamma, beta, rm, rv = fresh_bn(3)
    with pytest.raises(DimensionError):
        batch_norm(Tensor(np.zeros((2, 4, 5))), gamma, beta, rm, rv, "train")


# -- softmax -----------------------------------------------------------------------


def test_softmax_fixtures():
    assert np.allclose(softmax(Tensor(np.zeros(2))).data, [0.5, 0.5], atol=1e-12)
    out = softmax(Tensor(np.array([np.log(2.0), 0.0])))
    assert np.allclose(out.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(218)
    x = rng.standard_normal((4, 5)).astype(np.float32)
    a = softmax(Tensor(x), axis=-1).data
    b = softmax(Tensor(x + 100.0), axis=-1).data
    assert np.allclose(a, b, atol=1e-6)


def test_softmax_slices_sum_to_one():
    rng = np.random.default_rng(219)
    for _ in range(20):
        shape = tuple(rng.integers(2, 6, size=int(rng.integers(1, 4))))
        axis = int(rng.integers(0, len(shape)))
        y = softmax(Tensor(rng.standard_normal(shape).astype(np.float32)),
                    axis=axis).data
        assert np.all(y > 0) and np.all(y < 1)
        assert np.allclose(y.sum(axis=axis), 1.0, atol=1e-6)


def test_softmax_gradients():
    rng = np.random.default_rng(220)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    coeff = rng.standard_normal((3, 4))
    errs = check_gradients(lambda: (softmax(x, axis=1) * coeff).sum(), [x])
    assert max(errs.values()) < 1e-7
    errs = check_gradients(lambda: (softmax(x, axis=0) * coeff).sum(), [x])
    assert max(errs.values()) < 1e-7


# -- dropout -----------------------------------------------------------------------


def test_dropout_identity_cases():
    x = Tensor(np.ones((3, 3)))
    assert dropout(x, 0.0, "train", RngStream(0)) is x
    assert dropout(x, 0.7, "infer") is x


def test_dropout_parameter_validation():
    x = Tensor(np.ones(2))
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(ParameterError):
            dropout(x, bad, "train", RngStream(0))
    with pytest.raises(ParameterError):
        dropout(x, 0.5, "train")  # no rng
    with pytest.raises(ParameterError):
        dropout(x, 0.5, "evaluate", RngStream(0))


def test_dropout_zero_fraction_and_scaling():
    x = Tensor(np.ones(100000, dtype=np.float32))
    y = dropout(x, 0.5, "train", RngStream(5))
    zero_frac = float((y.data == 0).mean())
    assert abs(zero_frac - 0.5) < 0.01
    survivors = y.data[y.data != 0]
    assert np.allclose(survivors, 2.0)


def test_dropout_deterministic_under_seed():
    x = Tensor(np.ones((20, 20)))
    a = dropout(x, 0.3, "train", RngStream(9)).data
    b = dropout(x, 0.3, "train", RngStream(9)).data
    assert np.array_equal(a, b)


def test_dropout_gradient_uses_the_applied_mask():
    x = Tensor(np.full(1000, 3.0), requires_grad=True)
    y = dropout(x, 0.25, "train", RngStream(3))
    y.sum().backward()
    assert np.array_equal(x.grad, y.data / 3.0)


# -- relu --------------------------------------------------------------------------


def test_relu_values():
    out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])
    x = np.abs(np.random.default_rng(221).standard_normal((3, 3))) + 0.1
    assert np.array_equal(relu(Tensor(x)).data, x)


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(222)
    vals = rng.standard_normal((4, 4))
    vals[np.abs(vals) < 0.1] += 0.2  # keep clear of the kink
    x = Tensor(vals, requires_grad=True)
    errs = check_gradients(lambda: (relu(x) * relu(x)).sum(), [x])
    assert max(errs.values()) < 1e-7


def test_guided_rule_drops_negative_upstream_gradients():
    upstream = np.array([1.0, -1.0, 1.0, -2.0])
    values = np.array([-1.0, 0.5, 2.0, 3.0])

    x_plain = Tensor(values.copy(), requires_grad=True)
    (relu(x_plain) * upstream).sum().backward()
    assert np.array_equal(x_plain.grad, [0.0, -1.0, 1.0, -2.0])

    x_guided = Tensor(values.copy(), requires_grad=True)
    with guided_gradients():
        (relu(x_guided) * upstream).sum().backward()
    assert np.array_equal(x_guided.grad, [0.0, 0.0, 1.0, 0.0])
