"""The assembled detector: frozen feature extractor in front of the
capsule network, plus the bookkeeping (class names, input convention)
needed to run it on raw images."""

from dataclasses import dataclass, replace

import numpy as np

from .capsules import CAPSULE_DIM, CapsuleNetwork, RoutingConfig, predict
from .errors import ParameterError
from .rng import RngStream
from .tensor import Tensor, no_grad
from .vgg import VggPrefix, build_vgg_prefix, extract_features, normalize_image


@dataclass
class Detector:
    prefix: VggPrefix
    capsnet: CapsuleNetwork
    routing: RoutingConfig
    class_names: list
    input_convention: str  # "unit" for random-init prefix, "ilsvrc" for pretrained

    def forward_images(self, images, mode="infer", rng=None):
        """Float [0,1] images [3,H,W] or [B,3,H,W] -> (probabilities, capsules)."""
        x = Tensor(np.asarray(images, dtype=np.float32))
        x = normalize_image(x, self.input_convention)
        features = extract_features(self.prefix, x)
        cfg = replace(self.routing, mode=mode)
        return self.capsnet.forward(features, cfg, rng)

    def predict_probs(self, images):
        """Deterministic class probabilities as a plain array."""
        with no_grad():
            y_hat, _ = self.forward_images(images, mode="infer")
        return y_hat.data.copy()

    def parameters(self):
        return self.prefix.parameters() + self.capsnet.parameters()

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def parameter_counts(self):
        """Scalar-parameter totals: the frozen prefix, one capsule trunk
        with its routing matrices, and the whole model."""
        prefix = self.prefix.parameter_count()
        n = self.capsnet.num_capsules
        j = self.capsnet.num_classes
        trunk = int(sum(p.size for p in self.capsnet.capsules[0].parameters()))
        per_capsule = trunk + j * CAPSULE_DIM * CAPSULE_DIM
        return {
            "prefix": prefix,
            "capsule_trunk": trunk,
            "per_capsule": per_capsule,
            "capsules": n,
            "classes": j,
            "total": prefix + n * per_capsule,
        }


def default_class_names(num_classes):
    if num_classes == 2:
        return ["real", "fake"]
    return ["class%d" % i for i in range(num_classes)]


def build_detector(num_capsules=3, num_classes=2, seed=0, routing=None,
                   prefix_init="random", prefix_path=None,
                   prefix_trainable=False, class_names=None, rng=None):
    """Construct a ready-to-train detector.

    The default is the light 3-capsule binary model with a randomly
    initialized extractor; pass prefix_init="pretrained" with a weight
    file for the converted backbone (inputs then normalize with the
    ILSVRC statistics).
    """
    if rng is None:
        rng = RngStream(seed)
    if class_names is None:
        class_names = default_class_names(num_classes)
    if len(class_names) != num_classes:
        raise ParameterError(
            "%d class names given for %d classes"
            % (len(class_names), num_classes))
    prefix = build_vgg_prefix(init=prefix_init, rng=rng.child(1),
                              path=prefix_path, trainable=prefix_trainable)
    capsnet = CapsuleNetwork(num_capsules, num_classes, rng.child(2))
    convention = "ilsvrc" if prefix_init == "pretrained" else "unit"
    return Detector(prefix=prefix, capsnet=capsnet,
                    routing=routing or RoutingConfig(),
                    class_names=list(class_names),
                    input_convention=convention)
