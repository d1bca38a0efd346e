"""Saliency heatmaps via guided backpropagation.

The map is the gradient of the target class's output-capsule activation
(mean of its pre-softmax vector components) with respect to the input
image, computed with the guided relu rule — gradients pass only where
both the forward activation and the incoming gradient are positive —
then collapsed over color channels by the absolute maximum and
normalized to [0,1].
"""

from dataclasses import replace

import numpy as np
from PIL import Image

from .capsules import dynamic_routing
from .errors import NumericalError, ParameterError
from .ops import guided_gradients
from .tensor import Tensor
from .vgg import extract_features, normalize_image


def saliency_map(detector, image, target_class):
    """[3,H,W] float [0,1] image -> [H,W] heatmap in [0,1]."""
    if not 0 <= target_class < detector.capsnet.num_classes:
        raise ParameterError(
            "target class %d outside [0, %d)"
            % (target_class, detector.capsnet.num_classes))
    for p in detector.parameters():
        if not np.isfinite(p.data).all():
            raise NumericalError(
                "parameter %r contains non-finite values" % p.name)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ParameterError(
            "saliency expects one [3,H,W] image, got %r" % (arr.shape,))
    x = Tensor(arr[None], requires_grad=True, name="image")
    routing = replace(detector.routing, mode="infer")
    with guided_gradients():
        normalized = normalize_image(x, detector.input_convention)
        features = extract_features(detector.prefix, normalized)
        u = detector.capsnet.capsule_outputs(features, "infer")
        routed = dynamic_routing(u, detector.capsnet.routing_w, routing)
        target = routed.vectors[:, target_class].mean()
        target.backward()
    grad = x.grad[0] if x.grad is not None else np.zeros_like(arr)
    heat = np.abs(grad).max(axis=0)
    peak = heat.max()
    if peak > 0:
        heat = heat / peak
    return heat.astype(np.float32)


def save_heatmap(path, heat):
    """Write a [H,W] map in [0,1] as an 8-bit grayscale PNG."""
    arr = np.clip(np.round(np.asarray(heat) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
