"""Capsule-network detector for manipulated images and video frames.

A numpy implementation end to end: a small reverse-mode autodiff core,
a frozen convolutional feature extractor, primary capsules with
statistical pooling (input-size independent), noise/dropout-regularized
dynamic routing, an Adam training loop, and forensic metrics (EER,
HTER, ROC) with patch/frame score aggregation.
"""

from .capsules import (CapsuleNetwork, OutputCapsules, PrimaryCapsule,
                       RoutingConfig, cross_entropy_loss, dynamic_routing,
                       predict, routing_iterations, squash, statistical_pool)
from .errors import (AutodiffError, CapsForensicsError, ConfigError,
                     DataError, DimensionError, NumericalError,
                     ParameterError, WeightFormatError)
from .gradcheck import check_gradients, finite_difference_gradient, relative_error
from .metrics import (ScoreReport, accuracy, confusion_matrix, eer,
                      far_frr_at, hter, read_scores, roc, write_scores)
from .model import Detector, build_detector, default_class_names
from .pipeline import (ManifestEntry, Unit, aggregate_scores, build_split,
                       center_crop, crop_region, load_image, prepare_units,
                       read_manifest, split_patches, write_manifest)
from .rng import RngStream
from .saliency import saliency_map, save_heatmap
from .tensor import Tensor, backward, matmul, no_grad, zero_grads
from .training import (Adam, Checkpoint, FeatureCache, TrainConfig,
                       aggregate_by_group, evaluate, fit, load_checkpoint,
                       save_checkpoint, score_units, train_epoch)
from .vgg import VggPrefix, build_vgg_prefix, extract_features, normalize_image
from .weights import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "Adam", "AutodiffError", "CapsForensicsError", "CapsuleNetwork",
    "Checkpoint", "ConfigError", "DataError", "Detector", "DimensionError",
    "FeatureCache", "ManifestEntry", "NumericalError", "OutputCapsules",
    "ParameterError", "PrimaryCapsule", "RngStream", "RoutingConfig",
    "ScoreReport", "Tensor", "TrainConfig", "Unit", "VggPrefix",
    "WeightFormatError", "accuracy", "aggregate_by_group",
    "aggregate_scores", "backward", "build_detector", "build_split",
    "build_vgg_prefix", "center_crop", "check_gradients",
    "confusion_matrix", "crop_region", "cross_entropy_loss",
    "default_class_names", "dynamic_routing", "eer", "evaluate",
    "extract_features", "far_frr_at", "finite_difference_gradient", "fit",
    "hter", "load_checkpoint", "load_image", "load_weights", "matmul",
    "no_grad", "normalize_image", "predict", "prepare_units",
    "read_manifest", "read_scores", "relative_error", "roc",
    "routing_iterations", "saliency_map", "save_checkpoint", "save_heatmap",
    "save_weights", "score_units", "split_patches", "squash",
    "statistical_pool", "train_epoch", "write_manifest", "write_scores",
    "zero_grads",
]
