"""Frozen convolutional feature extractor.

The prefix of a VGG-19 classifier up to (and including) its third max
pooling layer: eight 3x3/pad-1 convolutions with relu, arranged
64-64 / pool / 128-128 / pool / 256-256-256-256 / pool. It maps a
[3,H,W] image to a [256,H/8,W/8] feature map (each pool halves with
floor) and exposes exactly 2,325,568 parameters.

Weights either come from a converted pretrained file (tensor names
"vgg.conv1.weight" ... "vgg.conv8.bias") or are drawn He-normal for
self-contained experiments. Pretrained weights expect inputs normalized
with the ILSVRC channel statistics below; randomly initialized ones are
used with plain [0,1] inputs.
"""

import numpy as np

from .errors import DimensionError, ParameterError, WeightFormatError
from .nn import Conv2d
from .ops import maxpool2d, relu
from .tensor import no_grad
from .weights import load_weights, save_weights

# Channel means/stds of the ILSVRC training images, the convention the
# published weights were trained with ([0,1] inputs).
ILSVRC_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
ILSVRC_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

_CHANNELS = [(3, 64), (64, 64), (64, 128), (128, 128),
             (128, 256), (256, 256), (256, 256), (256, 256)]
_POOL_AFTER = frozenset({2, 4, 8})  # 1-based conv indices

OUTPUT_CHANNELS = 256
MIN_INPUT_SIZE = 8


class VggPrefix:
    """Eight conv layers + three pools, usually frozen.

    ``trainable=False`` marks every parameter as not requiring
    gradients, so backward passes skip them entirely.
    """

    def __init__(self, rng, trainable=False):
        self.trainable = bool(trainable)
        self.convs = []
        for i, (c_in, c_out) in enumerate(_CHANNELS, start=1):
            conv = Conv2d(c_in, c_out, 3, rng, padding=1,
                          name="vgg.conv%d" % i)
            self.convs.append(conv)
        self._set_trainable(self.trainable)

    def _set_trainable(self, flag):
        self.trainable = bool(flag)
        for p in self.parameters():
            p.requires_grad = self.trainable

    def __call__(self, x):
        for i, conv in enumerate(self.convs, start=1):
            x = relu(conv(x))
            if i in _POOL_AFTER:
                x = maxpool2d(x, 2, stride=2)
        return x

    def parameters(self):
        return [p for conv in self.convs for p in conv.parameters()]

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, arrays):
        """Install weights by name; the first missing or misshaped record
        is reported explicitly."""
        for p in self.parameters():
            if p.name not in arrays:
                raise WeightFormatError("missing tensor %r" % p.name)
            arr = np.asarray(arrays[p.name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise WeightFormatError(
                    "tensor %r has shape %r, expected %r"
                    % (p.name, arr.shape, p.data.shape))
            p.data[...] = arr

    def save(self, path):
        save_weights(path, self.state_dict())


def build_vgg_prefix(init="random", rng=None, path=None, trainable=False):
    """Construct the extractor.

    init="random" draws He-normal weights from ``rng``; init="pretrained"
    loads the converted weight file at ``path`` (conversion from the
    published VGG-19 release is an offline step; see README).
    """
    if init == "random":
        if rng is None:
            raise ParameterError("random init needs an RngStream")
        return VggPrefix(rng, trainable=trainable)
    if init == "pretrained":
        if path is None:
            raise ParameterError("pretrained init needs a weight-file path")
        from .rng import RngStream
        prefix = VggPrefix(RngStream(0), trainable=trainable)
        prefix.load_state_dict(load_weights(path))
        return prefix
    raise ParameterError("init must be 'random' or 'pretrained', got %r" % (init,))


def extract_features(prefix, image):
    """[3,H,W] image (or [N,3,H,W] batch) -> [256,H//8,W//8] features.

    Requires H, W >= 8 so all three pools see at least one full window.
    Deterministic: the prefix has no stochastic layers.
    """
    ndim = image.ndim
    shape = image.shape
    if ndim not in (3, 4):
        raise DimensionError(
            "expected [3,H,W] or [N,3,H,W], got shape %r" % (shape,))
    c, h, w = shape[-3], shape[-2], shape[-1]
    if c != 3:
        raise DimensionError("expected 3 input channels, got %d" % c)
    if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
        raise DimensionError(
            "input %dx%d is smaller than the minimum %dx%d"
            % (h, w, MIN_INPUT_SIZE, MIN_INPUT_SIZE))
    return prefix(image)


def extract_features_array(prefix, images):
    """Forward a raw [N,3,H,W] array without recording any graph."""
    with no_grad():
        return extract_features(prefix, _as_batch(images)).data


def _as_batch(images):
    from .tensor import as_tensor
    t = as_tensor(images)
    return t.reshape((1,) + t.shape) if t.ndim == 3 else t


def normalize_image(image, convention):
    """Map a [0,1] float image to extractor input space.

    "unit" keeps values as-is (random-init extractor); "ilsvrc" applies
    the channel statistics the pretrained weights assume.
    """
    if convention == "unit":
        return image
    if convention == "ilsvrc":
        mean = ILSVRC_MEAN.reshape(3, 1, 1)
        std = ILSVRC_STD.reshape(3, 1, 1)
        if image.ndim == 4:
            mean, std = mean[None], std[None]
        return (image - mean) / std
    raise ParameterError(
        "normalization convention must be 'unit' or 'ilsvrc', got %r"
        % (convention,))
