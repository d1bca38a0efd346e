"""TOML run configuration.

Sections: [model] (+ [model.routing]), [train], [data], [io]. Every key
is checked against the schema below before any compute starts; unknown
keys are rejected so typos fail loudly instead of silently using a
default.
"""

import os
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .capsules import RoutingConfig
from .errors import ConfigError
from .training import TrainConfig

_MODEL_KEYS = {"capsules", "classes", "input_size", "class_names", "routing"}
_ROUTING_KEYS = {"iterations", "noise_sigma", "dropout_p"}
_TRAIN_KEYS = {"epochs", "batch", "lr", "seed", "checkpoint_every"}
_DATA_KEYS = {"manifest", "root", "crop", "crop_size", "patch_size",
              "resize_to", "train_frames", "eval_frames", "use_bbox"}
_IO_KEYS = {"weights", "checkpoint_dir", "report_dir"}


@dataclass
class ModelConfig:
    capsules: int = 3
    classes: int = 2
    input_size: int = 100
    class_names: list = None
    routing: RoutingConfig = field(default_factory=RoutingConfig)


@dataclass
class DataConfig:
    manifest: str = None
    root: str = None
    crop: str = "none"
    crop_size: int = None
    patch_size: int = None
    resize_to: int = None
    train_frames: int = None
    eval_frames: int = None
    use_bbox: bool = True


@dataclass
class IoConfig:
    weights: str = None
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    io: IoConfig = field(default_factory=IoConfig)

    def validate(self):
        if self.model.capsules < 1:
            raise ConfigError("model.capsules must be >= 1, got %r"
                              % (self.model.capsules,))
        if self.model.classes < 2:
            raise ConfigError("model.classes must be >= 2, got %r"
                              % (self.model.classes,))
        if self.model.input_size < 8:
            raise ConfigError("model.input_size must be >= 8, got %r"
                              % (self.model.input_size,))
        if (self.model.class_names is not None
                and len(self.model.class_names) != self.model.classes):
            raise ConfigError(
                "model.class_names lists %d names for %d classes"
                % (len(self.model.class_names), self.model.classes))
        try:
            self.model.routing.validate()
            self.train.validate()
        except Exception as exc:
            raise ConfigError(str(exc)) from exc
        if self.data.crop not in ("none", "center", "patch"):
            raise ConfigError("data.crop must be none/center/patch, got %r"
                              % (self.data.crop,))
        if self.data.crop == "center" and not self.data.crop_size:
            raise ConfigError("data.crop = 'center' needs data.crop_size")
        if self.data.crop == "patch" and not self.data.patch_size:
            raise ConfigError("data.crop = 'patch' needs data.patch_size")
        return self


def _check_keys(section, table, allowed):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError("unknown key(s) in [%s]: %s"
                          % (section, ", ".join(sorted(unknown))))


def load_config(path):
    """Parse and validate a TOML run configuration file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config %s is not valid TOML: %s"
                          % (path, exc)) from exc
    _check_keys("", raw, {"model", "train", "data", "io"})

    cfg = RunConfig()
    model = raw.get("model", {})
    _check_keys("model", model, _MODEL_KEYS)
    routing = model.get("routing", {})
    _check_keys("model.routing", routing, _ROUTING_KEYS)
    cfg.model = ModelConfig(
        capsules=int(model.get("capsules", 3)),
        classes=int(model.get("classes", 2)),
        input_size=int(model.get("input_size", 100)),
        class_names=model.get("class_names"),
        routing=RoutingConfig(
            iterations=int(routing.get("iterations", 2)),
            noise_sigma=float(routing.get("noise_sigma", 0.1)),
            dropout_p=float(routing.get("dropout_p", 0.05))))

    train = raw.get("train", {})
    _check_keys("train", train, _TRAIN_KEYS)
    cfg.train = TrainConfig(
        epochs=int(train.get("epochs", 25)),
        batch_size=None if train.get("batch") is None else int(train["batch"]),
        lr=float(train.get("lr", 5e-4)),
        seed=int(train.get("seed", 0)),
        checkpoint_every=int(train.get("checkpoint_every", 1)))

    data = raw.get("data", {})
    _check_keys("data", data, _DATA_KEYS)
    cfg.data = DataConfig(
        manifest=data.get("manifest"),
        root=data.get("root"),
        crop=data.get("crop", "none"),
        crop_size=data.get("crop_size"),
        patch_size=data.get("patch_size"),
        resize_to=data.get("resize_to"),
        train_frames=data.get("train_frames"),
        eval_frames=data.get("eval_frames"),
        use_bbox=bool(data.get("use_bbox", True)))

    io = raw.get("io", {})
    _check_keys("io", io, _IO_KEYS)
    cfg.io = IoConfig(weights=io.get("weights"),
                      checkpoint_dir=io.get("checkpoint_dir", "checkpoints"),
                      report_dir=io.get("report_dir", "reports"))
    return cfg.validate()


def data_root(cfg):
    """Directory image paths are relative to: data.root if set, else the
    manifest's own directory."""
    if cfg.data.root:
        return cfg.data.root
    if cfg.data.manifest:
        return os.path.dirname(os.path.abspath(cfg.data.manifest))
    return "."
