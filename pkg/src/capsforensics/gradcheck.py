"""Finite-difference gradient checking.

Central differences evaluated coordinate by coordinate against the
reverse-mode result. For big tensors a subset of coordinates can be
sampled; the relative error uses the max-norm of both gradients so a
single bad coordinate cannot hide inside a large denominator.
"""

import numpy as np

from .tensor import Tensor, no_grad, zero_grads


def finite_difference_gradient(f, x, h=1e-4, indices=None):
    """Central-difference gradient of scalar-valued ``f`` w.r.t. ``x``.

    ``f`` is called with no arguments and must read ``x.data``; entries
    are perturbed in place and restored afterwards. ``indices`` limits
    the check to a sequence of flat coordinates (the rest stay zero).
    """
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    coords = range(flat.size) if indices is None else indices
    for i in coords:
        keep = flat[i]
        flat[i] = keep + h
        up = float(f())
        flat[i] = keep - h
        down = float(f())
        flat[i] = keep
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(x.data.shape)


def relative_error(analytic, numeric):
    """max |a - n| scaled by the larger max-norm (floored at 1e-12)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(f, params, h=1e-4, max_coords=None, rng=None):
    """Compare reverse-mode gradients of ``f()`` against finite differences.

    ``f`` must rebuild its graph on every call and return a scalar
    Tensor. Returns ``{param_name_or_index: relative_error}``. When
    ``max_coords`` is given, that many coordinates per parameter are
    sampled (seeded through ``rng``) and the comparison is restricted
    to them.

    A central difference cannot resolve gradients smaller than the
    rounding noise of the loss divided by the step, so parameters whose
    analytic and numeric gradients both sit below that floor (true for
    e.g. a conv bias that batch normalization cancels exactly) are
    reported as 0.0 rather than as noise ratios.
    """
    params = list(params)
    zero_grads(params)
    loss = f()
    if not isinstance(loss, Tensor):
        raise TypeError("f() must return a Tensor")
    loss.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    noise_floor = (32.0 * np.finfo(np.float64).eps
                   * max(1.0, abs(loss.item())) / h)
    zero_grads(params)

    def forward_value():
        with no_grad():
            return f().item()

    errors = {}
    for k, p in enumerate(params):
        if max_coords is not None and p.data.size > max_coords:
            if rng is None:
                raise ValueError("sampled checking needs an rng")
            idx = rng.permutation(p.data.size)[:max_coords]
        else:
            idx = None
        numeric = finite_difference_gradient(forward_value, p, h=h, indices=idx)
        a = analytic[k].reshape(-1).astype(np.float64)
        n = numeric.reshape(-1)
        if idx is not None:
            a, n = a[idx], n[idx]
        key = p.name if p.name else k
        if max(np.abs(a).max(initial=0.0),
               np.abs(n).max(initial=0.0)) <= noise_floor:
            errors[key] = 0.0
        else:
            errors[key] = relative_error(a, n)
    return errors
