"""Capsule network for forensic classification.

Each of N primary capsules reduces a [256,H',W'] feature map to a
4-vector u through a small 2-D conv stack, a statistical pooling layer
(per-channel mean and sample variance — this is what makes the network
independent of the input image size), and a 1-D conv stack. Agreement
between capsules is then negotiated by dynamic routing with two
train-time regularizations: Gaussian noise added to the routing
matrices and elementwise dropout on the votes. Class probabilities are
the per-dimension softmax over output capsules, averaged over
dimensions.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .nn import BatchNorm, Conv1d, Conv2d
from .ops import dropout, relu, softmax
from .tensor import Tensor, accumulate, as_tensor, from_op, stack

CAPSULE_DIM = 4  # length of u and of each output capsule vector


# -- pointwise pieces -----------------------------------------------------------


def squash(u, axis=-1):
    """Eq.-style length scaling: v = u * ||u|| / (1 + ||u||^2).

    Keeps direction, maps magnitude into [0,1); the zero vector stays
    zero. The gradient is computed analytically so the zero point is
    exact rather than a 0/0.
    """
    u = as_tensor(u)
    x64 = u.data.astype(np.float64)
    n2 = (x64 * x64).sum(axis=axis, keepdims=True)
    n = np.sqrt(n2)
    denom = 1.0 + n2
    scale = n / denom
    out = (x64 * scale).astype(u.dtype)

    def grad_fn(g):
        if not u.requires_grad:
            return
        g64 = g.astype(np.float64)
        dot = (x64 * g64).sum(axis=axis, keepdims=True)
        # d scale/d n = (1 - n^2) / (1 + n^2)^2; the radial term carries
        # an extra 1/n that vanishes against u * (u . g) ~ n^2 at zero.
        radial = np.where(
            n > 0, (1.0 - n2) / (denom * denom * np.where(n > 0, n, 1.0)), 0.0)
        accumulate(u, (g64 * scale + x64 * dot * radial).astype(u.dtype))

    return from_op(out, (u,), grad_fn)


def statistical_pool(features):
    """[K,H,W] -> [2,K] (or [B,K,H,W] -> [B,2,K]).

    Row 0 holds per-channel means over the H*W positions; row 1 the
    sample variances with the n-1 denominator. Accumulation runs in
    64-bit regardless of input dtype.
    """
    x = as_tensor(features)
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4:
        raise DimensionError(
            "statistical_pool expects [K,H,W] or [B,K,H,W], got %r"
            % (features.shape,))
    b, k, h, w = x.shape
    n = h * w
    if n < 2:
        raise DimensionError(
            "statistical_pool needs at least 2 spatial positions for the "
            "n-1 variance, got %dx%d" % (h, w))
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=(2, 3))
    centered = x64 - mu[:, :, None, None]
    var = (centered * centered).sum(axis=(2, 3)) / (n - 1)
    out = np.stack([mu, var], axis=1).astype(x.dtype)

    def grad_fn(g):
        if not x.requires_grad:
            return
        g64 = g.astype(np.float64)
        gmu = g64[:, 0][:, :, None, None]
        gvar = g64[:, 1][:, :, None, None]
        gx = gmu / n + gvar * 2.0 * centered / (n - 1)
        accumulate(x, gx.astype(x.dtype))

    result = from_op(out, (x,), grad_fn)
    return result.reshape(result.shape[1:]) if squeeze else result


# -- primary capsules --------------------------------------------------------------


class PrimaryCapsule:
    """One feature-map-to-4-vector reducer.

    2-D trunk (256->64->16, 3x3 pad 1, batch norm + relu) feeds the
    statistical pool; the resulting [2,16] statistics pass through a 1-D
    trunk (2->8 k5 s2, 8->1 k3) whose length-4 output is u.
    """

    def __init__(self, rng, name="caps"):
        self.name = name
        self.conv1 = Conv2d(256, 64, 3, rng, padding=1, name=name + ".conv1")
        self.bn1 = BatchNorm(64, name=name + ".bn1")
        self.conv2 = Conv2d(64, 16, 3, rng, padding=1, name=name + ".conv2")
        self.bn2 = BatchNorm(16, name=name + ".bn2")
        self.conv3 = Conv1d(2, 8, 5, rng, stride=2, name=name + ".conv3")
        self.bn3 = BatchNorm(8, name=name + ".bn3")
        self.conv4 = Conv1d(8, 1, 3, rng, stride=1, name=name + ".conv4")
        self.bn4 = BatchNorm(1, name=name + ".bn4")

    def __call__(self, features, mode):
        x = as_tensor(features)
        squeeze = x.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 4:
            raise DimensionError(
                "capsule input must be [256,H,W] or [B,256,H,W], got %r"
                % (features.shape,))
        if x.shape[2] < 3 or x.shape[3] < 3:
            raise DimensionError(
                "capsule needs a feature map of at least 3x3, got %dx%d"
                % (x.shape[2], x.shape[3]))
        x = relu(self.bn1(self.conv1(x), mode))
        x = relu(self.bn2(self.conv2(x), mode))
        x = statistical_pool(x)                      # [B,2,16]
        x = relu(self.bn3(self.conv3(x), mode))      # [B,8,6]
        x = self.bn4(self.conv4(x), mode)            # [B,1,4]
        u = x.reshape(x.shape[0], CAPSULE_DIM)
        return u.reshape(CAPSULE_DIM) if squeeze else u

    forward = __call__

    def parameters(self):
        out = []
        for layer in (self.conv1, self.bn1, self.conv2, self.bn2,
                      self.conv3, self.bn3, self.conv4, self.bn4):
            out.extend(layer.parameters())
        return out

    def norm_layers(self):
        return [self.bn1, self.bn2, self.bn3, self.bn4]


def primary_capsule_forward(capsule, features, mode):
    return capsule(features, mode)


# -- routing -----------------------------------------------------------------------


@dataclass
class RoutingConfig:
    """Knobs of the routing step.

    noise_sigma is the standard deviation of the additive weight noise
    (variance sigma^2); dropout_p drops vote entries elementwise. Both
    act in train mode only.
    """

    iterations: int = 2
    noise_sigma: float = 0.1
    dropout_p: float = 0.05
    mode: str = "infer"

    def validate(self):
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ParameterError(
                "routing iterations must be an integer >= 1, got %r"
                % (self.iterations,))
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError(
                "routing dropout must satisfy 0 <= p < 1, got %r"
                % (self.dropout_p,))
        if self.noise_sigma < 0.0:
            raise ParameterError(
                "noise sigma must be >= 0, got %r" % (self.noise_sigma,))
        if self.mode not in ("train", "infer"):
            raise ParameterError(
                "mode must be 'train' or 'infer', got %r" % (self.mode,))
        return self


@dataclass
class OutputCapsules:
    """Routing result: output vectors plus diagnostics.

    ``vectors`` is [J,m] (or [B,J,m]); ``votes`` holds the transformed,
    regularized inputs u-hat; ``couplings`` records the agreement
    weights c at the start of each iteration.
    """

    vectors: Tensor
    votes: Tensor
    couplings: list = field(default_factory=list)


def routing_iterations(u_hat, iterations):
    """The agreement loop, starting from votes u_hat [N,J,m] or [B,N,J,m].

    Per iteration: couplings c_i = softmax over j of logits b_i; weighted
    sum s_j = sum_i c_ij u_hat(i); v_j = squash(s_j); logit update
    b_ij += u_hat(i) . v_j. Returns (v, couplings-per-iteration).
    """
    if iterations < 1:
        raise ParameterError(
            "routing needs at least one iteration, got %r" % (iterations,))
    uh = as_tensor(u_hat)
    squeeze = uh.ndim == 3
    if squeeze:
        uh = uh.reshape((1,) + uh.shape)
    if uh.ndim != 4:
        raise DimensionError(
            "votes must be [N,J,m] or [B,N,J,m], got %r" % (u_hat.shape,))
    bsz, n, j, m = uh.shape
    logits = as_tensor(np.zeros((bsz, n, j, 1), dtype=uh.dtype))
    couplings = []
    v = None
    for _ in range(int(iterations)):
        c = softmax(logits, axis=2)                       # [B,N,J,1]
        couplings.append(c.data[..., 0].copy())
        s = (c * uh).sum(axis=1)                          # [B,J,m]
        v = squash(s, axis=-1)
        agreement = (uh * v.reshape(bsz, 1, j, m)).sum(axis=-1, keepdims=True)
        logits = logits + agreement
    if squeeze:
        v = v.reshape(j, m)
        couplings = [c[0] for c in couplings]
    return v, couplings


def dynamic_routing(u, w, cfg, rng=None):
    """Route capsule outputs u ([N,m] or [B,N,m]) through matrices
    w [N,J,m,m] under ``cfg``.

    Train mode perturbs the matrices with elementwise Gaussian noise and
    applies dropout to the votes; infer mode is deterministic.
    """
    cfg.validate()
    if cfg.mode == "train" and rng is None:
        raise ParameterError("train-mode routing needs an RngStream")
    u = as_tensor(u)
    w = as_tensor(w)
    squeeze = u.ndim == 2
    if squeeze:
        u = u.reshape((1,) + u.shape)
    if u.ndim != 3 or w.ndim != 4:
        raise DimensionError(
            "expected u [B,N,m] and w [N,J,m,m], got %r and %r"
            % (u.shape, w.shape))
    bsz, n, m = u.shape
    if w.shape[0] != n or w.shape[2] != m or w.shape[3] != m:
        raise DimensionError(
            "routing matrices %r do not match %d capsules of dimension %d"
            % (w.shape, n, m))
    j = w.shape[1]

    w_hat = w
    if cfg.mode == "train" and cfg.noise_sigma > 0.0:
        w_hat = w + rng.normal(w.shape, std=cfg.noise_sigma, dtype=w.dtype)

    us = squash(u, axis=-1)
    votes = (w_hat.reshape((1,) + w_hat.shape)
             @ us.reshape(bsz, n, 1, m, 1)).reshape(bsz, n, j, m)
    votes = dropout(votes, cfg.dropout_p, cfg.mode, rng)
    v, couplings = routing_iterations(votes, cfg.iterations)
    if squeeze:
        v = v.reshape(j, m)
        votes = votes.reshape(n, j, m)
        couplings = [c[0] for c in couplings]
    return OutputCapsules(vectors=v, votes=votes, couplings=couplings)


# -- prediction and loss ---------------------------------------------------------------


def predict(capsules):
    """Class probabilities: softmax across capsules per dimension, then
    the mean over the m dimensions. Accepts OutputCapsules or a raw
    [J,m] / [B,J,m] value; each output row sums to 1."""
    v = capsules.vectors if isinstance(capsules, OutputCapsules) else capsules
    if isinstance(v, (list, tuple)):
        lengths = {np.asarray(item).shape for item in v}
        if len(lengths) > 1:
            raise DimensionError(
                "output capsules must share one dimension, got %r" % (lengths,))
        v = stack([as_tensor(item) for item in v], axis=0)
    v = as_tensor(v)
    if v.ndim < 2:
        raise DimensionError(
            "predict expects [J,m] or [B,J,m] capsules, got %r" % (v.shape,))
    return softmax(v, axis=-2).mean(axis=-1)


def cross_entropy_loss(y_hat, y):
    """Negative log-likelihood of labels under predicted probabilities.

    Forms: a bare probability-of-positive (scalar or [B]) with binary
    labels, or a probability vector [J] / matrix [B,J] with integer
    labels. Probabilities are clamped at 1e-7 before the log; batch
    inputs return the mean loss.
    """
    p = as_tensor(y_hat)
    labels = np.asarray(y)
    if p.ndim == 0 or (p.ndim == 1 and labels.ndim == 1 and p.shape == labels.shape):
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ParameterError(
                "binary labels must be 0 or 1, got %r" % (np.unique(labels),))
        pc = p.clip(1e-7, 1.0 - 1e-7)
        yv = labels.astype(np.float32)
        losses = -(yv * pc.log() + (1.0 - yv) * (1.0 - pc).log())
        return losses.mean()
    j = p.shape[-1]
    if labels.ndim != p.ndim - 1 or (labels.ndim and labels.shape != p.shape[:-1]):
        raise DimensionError(
            "labels %r do not match predictions %r" % (labels.shape, p.shape))
    if labels.size and (labels.min() < 0 or labels.max() >= j):
        raise ParameterError(
            "labels must lie in [0, %d), got range [%d, %d]"
            % (j, labels.min(), labels.max()))
    onehot = np.zeros(p.shape, dtype=np.float32)
    np.put_along_axis(onehot, labels[..., None].astype(np.int64), 1.0, axis=-1)
    picked = (p * onehot).sum(axis=-1)
    return -(picked.clip(1e-7, 1.0).log()).mean()


# -- the assembled network ------------------------------------------------------------


class CapsuleNetwork:
    """N primary capsules plus their routing matrices.

    N=3 is the light configuration, N=10 the full one; J output
    capsules (2 for real-vs-fake, 4 for the multi-source setting).
    Routing matrices are [N,J,4,4], drawn from N(0, 0.01) at init.
    """

    def __init__(self, num_capsules, num_classes, rng):
        if num_capsules < 1:
            raise ParameterError(
                "need at least one primary capsule, got %d" % num_capsules)
        if num_classes < 2:
            raise ParameterError(
                "need at least two output capsules, got %d" % num_classes)
        self.num_capsules = int(num_capsules)
        self.num_classes = int(num_classes)
        self.capsules = [PrimaryCapsule(rng, name="caps%d" % i)
                         for i in range(self.num_capsules)]
        self.routing_w = Tensor(
            rng.normal((self.num_capsules, self.num_classes,
                        CAPSULE_DIM, CAPSULE_DIM), std=0.1),
            requires_grad=True, name="routing.W")

    def capsule_outputs(self, features, mode):
        """Stack of per-capsule u vectors: [B,N,4] (or [N,4] unbatched)."""
        us = [caps(features, mode) for caps in self.capsules]
        axis = 1 if us[0].ndim == 2 else 0
        return stack(us, axis=axis)

    def forward(self, features, cfg, rng=None):
        """features -> (class probabilities, OutputCapsules)."""
        u = self.capsule_outputs(features, cfg.mode)
        caps = dynamic_routing(u, self.routing_w, cfg, rng)
        return predict(caps), caps

    __call__ = forward

    def parameters(self):
        out = []
        for caps in self.capsules:
            out.extend(caps.parameters())
        out.append(self.routing_w)
        return out

    def norm_layers(self):
        return [bn for caps in self.capsules for bn in caps.norm_layers()]

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        """All trainable arrays by name; routing matrices are split into
        one 4x4 record per (capsule, class) pair ("routing.W.i.j")."""
        out = {}
        for caps in self.capsules:
            for p in caps.parameters():
                out[p.name] = p.data
        for i in range(self.num_capsules):
            for j in range(self.num_classes):
                out["routing.W.%d.%d" % (i, j)] = self.routing_w.data[i, j]
        return out

    def buffers(self):
        out = {}
        for bn in self.norm_layers():
            out.update(bn.buffers())
        return out

    def load_state_dict(self, arrays):
        from .errors import WeightFormatError
        for caps in self.capsules:
            for p in caps.parameters():
                if p.name not in arrays:
                    raise WeightFormatError("missing tensor %r" % p.name)
                arr = np.asarray(arrays[p.name], dtype=p.data.dtype)
                if arr.shape != p.data.shape:
                    raise WeightFormatError(
                        "tensor %r has shape %r, expected %r"
                        % (p.name, arr.shape, p.data.shape))
                p.data[...] = arr
        for i in range(self.num_capsules):
            for j in range(self.num_classes):
                name = "routing.W.%d.%d" % (i, j)
                if name not in arrays:
                    raise WeightFormatError("missing tensor %r" % name)
                arr = np.asarray(arrays[name], dtype=self.routing_w.data.dtype)
                if arr.shape != (CAPSULE_DIM, CAPSULE_DIM):
                    raise WeightFormatError(
                        "tensor %r has shape %r, expected %r"
                        % (name, arr.shape, (CAPSULE_DIM, CAPSULE_DIM)))
                self.routing_w.data[i, j] = arr

    def load_buffers(self, arrays):
        from .errors import WeightFormatError
        for bn in self.norm_layers():
            mean_name = bn.name + ".running_mean"
            var_name = bn.name + ".running_var"
            if mean_name not in arrays or var_name not in arrays:
                raise WeightFormatError(
                    "missing running statistics for %r" % bn.name)
            bn.load_buffers(np.asarray(arrays[mean_name], dtype=np.float32),
                            np.asarray(arrays[var_name], dtype=np.float32))
