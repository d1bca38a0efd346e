"""Training loop and checkpointing.

The protocol: Adam (lr 5e-4, betas 0.9/0.999), per-epoch seed-derived
shuffling, train-only routing regularization, frozen extractor whose
features are computed once and cached. Every run is fully determined by
(seed, data order, config): epoch k always draws from the stream
``RngStream(seed).child(k)``, so a run resumed from a checkpoint at
epoch k is bit-identical to one that never stopped.

Checkpoint files ("CFC1") are a JSON header (format/epoch/model
metadata/config/metric snapshot) followed by one weight-record blob
holding model parameters, batch-norm running statistics, and the Adam
moments ("adam.m.*" / "adam.v.*").
"""

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .capsules import RoutingConfig, cross_entropy_loss
from .errors import DataError, NumericalError, ParameterError, WeightFormatError
from .metrics import ScoreReport
from .model import Detector, build_detector
from .pipeline import aggregate_scores
from .rng import RngStream
from .tensor import Tensor, no_grad, zero_grads
from .vgg import extract_features, normalize_image


class Adam:
    """Bias-corrected Adam over named parameter Tensors."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if None in names or len(set(names)) != len(names):
            raise ParameterError("Adam needs uniquely named parameters")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grads):
        """One update from a {param: gradient array} record."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correct1 = 1.0 - b1 ** self.t
        correct2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = np.asarray(grads[p])
            if not np.isfinite(g).all():
                raise NumericalError(
                    "non-finite gradient for parameter %r" % p.name)
            m = self.m[p.name]
            v = self.v[p.name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= (self.lr / correct1) * m / (
                np.sqrt(v / correct2) + self.eps)

    def state_arrays(self):
        out = {}
        for p in self.params:
            out["adam.m." + p.name] = self.m[p.name]
            out["adam.v." + p.name] = self.v[p.name]
        return out

    def load_state_arrays(self, arrays, t):
        for p in self.params:
            for prefix, store in (("adam.m.", self.m), ("adam.v.", self.v)):
                key = prefix + p.name
                if key not in arrays:
                    raise WeightFormatError("missing optimizer record %r" % key)
                arr = np.asarray(arrays[key], dtype=store[p.name].dtype)
                if arr.shape != store[p.name].shape:
                    raise WeightFormatError(
                        "optimizer record %r has shape %r, expected %r"
                        % (key, arr.shape, store[p.name].shape))
                store[p.name][...] = arr
        self.t = int(t)


@dataclass
class TrainConfig:
    """Protocol knobs. batch_size=None picks 100 for inputs up to
    128 pixels and 32 above that."""

    epochs: int = 25
    batch_size: int = None
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1

    def validate(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ParameterError("epochs must be an integer >= 1, got %r"
                                 % (self.epochs,))
        if self.batch_size is not None and self.batch_size < 1:
            raise ParameterError("batch size must be >= 1, got %r"
                                 % (self.batch_size,))
        if self.lr < 0:
            raise ParameterError("learning rate must be >= 0, got %r"
                                 % (self.lr,))
        if self.checkpoint_every < 1:
            raise ParameterError("checkpoint cadence must be >= 1, got %r"
                                 % (self.checkpoint_every,))
        return self

    def resolve_batch(self, input_size):
        if self.batch_size is not None:
            return int(self.batch_size)
        return 100 if input_size <= 128 else 32

    def to_dict(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "seed": self.seed,
                "checkpoint_every": self.checkpoint_every}


class FeatureCache:
    """Per-unit feature maps from a frozen extractor, computed once.

    Only valid while the prefix parameters stay unchanged — which is the
    frozen-training setting it exists for.
    """

    def __init__(self, detector, units, chunk=16):
        self.detector = detector
        self.units = units
        self.chunk = chunk
        self._store = [None] * len(units)

    def get(self, i):
        if self._store[i] is None:
            lo = i - i % self.chunk
            hi = min(lo + self.chunk, len(self.units))
            block = [self.units[k].image for k in range(lo, hi)]
            feats = _features_for(self.detector, np.stack(block))
            for k in range(lo, hi):
                self._store[k] = feats[k - lo]
        return self._store[i]

    def batch(self, indices):
        return np.stack([self.get(int(i)) for i in indices])


def _features_for(detector, images):
    x = Tensor(np.asarray(images, dtype=np.float32))
    x = normalize_image(x, detector.input_convention)
    with no_grad():
        return extract_features(detector.prefix, x).data


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    accuracy: float
    samples: int


def train_epoch(detector, units, cfg, optimizer, rng, cache=None, epoch=0):
    """One shuffled pass over the units; returns the epoch report.

    Aborts with a numerical error if the loss stops being finite, so a
    driver can fall back to its last checkpoint.
    """
    if not units:
        raise DataError("training split is empty")
    params = optimizer.params
    batch = cfg.resolve_batch(max(units[0].image.shape[-2:]))
    order = rng.permutation(len(units))
    routing = replace(detector.routing, mode="train")

    total_loss = 0.0
    correct = 0
    for start in range(0, len(order), batch):
        idx = order[start:start + batch]
        labels = np.array([units[int(i)].label for i in idx])
        if cache is not None:
            feats = Tensor(cache.batch(idx))
        else:
            images = np.stack([units[int(i)].image for i in idx])
            x = normalize_image(
                Tensor(np.asarray(images, dtype=np.float32)),
                detector.input_convention)
            feats = extract_features(detector.prefix, x)
        y_hat, _ = detector.capsnet.forward(feats, routing, rng)
        loss = cross_entropy_loss(y_hat, labels)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(
                "training loss diverged (epoch %d, batch at %d)"
                % (epoch, start))
        zero_grads(params)
        loss.backward()
        grads = {p: p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in params}
        optimizer.step(grads)
        total_loss += value * len(idx)
        correct += int((y_hat.data.argmax(axis=1) == labels).sum())
    n = len(units)
    return EpochReport(epoch=epoch, mean_loss=total_loss / n,
                       accuracy=correct / n, samples=n)


def score_units(detector, units, batch_size=32, cache=None):
    """Deterministic per-unit class probabilities (infer mode).

    Returns score records {sample_id, group_id, label, probs}. Batches
    are formed over runs of equal image shape so mixed-size splits work.
    """
    if not units:
        raise DataError("evaluation split is empty")
    samples = []
    start = 0
    while start < len(units):
        stop = start + 1
        while (stop < len(units) and stop - start < batch_size
               and units[stop].image.shape == units[start].image.shape):
            stop += 1
        idx = range(start, stop)
        if cache is not None:
            feats = Tensor(cache.batch(idx))
        else:
            feats = Tensor(_features_for(
                detector, np.stack([units[i].image for i in idx])))
        routing = replace(detector.routing, mode="infer")
        with no_grad():
            y_hat, _ = detector.capsnet.forward(feats, routing)
        for k, i in enumerate(idx):
            samples.append({"sample_id": units[i].sample_id,
                            "group_id": units[i].group_id,
                            "label": units[i].label,
                            "probs": [float(p) for p in y_hat.data[k]]})
        start = stop
    return samples


def aggregate_by_group(samples):
    """Collapse score records to one per group by averaging probabilities.

    Groups keep first-appearance order; every member must carry the same
    label (one video has one ground truth).
    """
    order = []
    by_group = {}
    for s in samples:
        gid = s["group_id"]
        if gid not in by_group:
            by_group[gid] = []
            order.append(gid)
        by_group[gid].append(s)
    out = []
    for gid in order:
        members = by_group[gid]
        labels = {m["label"] for m in members}
        if len(labels) != 1:
            raise DataError(
                "group %r mixes labels %r" % (gid, sorted(labels)))
        probs = aggregate_scores([m["probs"] for m in members])
        out.append({"sample_id": gid, "group_id": gid,
                    "label": members[0]["label"],
                    "probs": [float(p) for p in probs]})
    return out


def evaluate(detector, units, aggregation="none", batch_size=32,
             threshold=0.5, cache=None):
    """Score a split and compute metrics; parameters are untouched.

    aggregation="group" averages probabilities per group (video/source
    image) before scoring, "none" reports per-unit results.
    """
    if aggregation not in ("none", "group"):
        raise ParameterError(
            "aggregation must be 'none' or 'group', got %r" % (aggregation,))
    samples = score_units(detector, units, batch_size=batch_size, cache=cache)
    if aggregation == "group":
        samples = aggregate_by_group(samples)
    return ScoreReport.from_samples(
        samples, detector.capsnet.num_classes, threshold=threshold)


# -- checkpoints -------------------------------------------------------------------


CHECKPOINT_MAGIC = b"CFC1"


def _model_arrays(detector, optimizer=None):
    arrays = {}
    arrays.update(detector.prefix.state_dict())
    arrays.update(detector.capsnet.state_dict())
    arrays.update(detector.capsnet.buffers())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    return arrays


def save_checkpoint(path, detector, optimizer=None, epoch=-1, metrics=None,
                    train_config=None):
    """Write model + optimizer state with a JSON descriptor header."""
    from .weights import write_weight_records
    header = {
        "format": 1,
        "epoch": int(epoch),
        "adam_t": 0 if optimizer is None else optimizer.t,
        "has_optimizer": optimizer is not None,
        "model": {
            "capsules": detector.capsnet.num_capsules,
            "classes": detector.capsnet.num_classes,
            "class_names": detector.class_names,
            "input_convention": detector.input_convention,
            "prefix_trainable": detector.prefix.trainable,
        },
        "routing": {
            "iterations": detector.routing.iterations,
            "noise_sigma": detector.routing.noise_sigma,
            "dropout_p": detector.routing.dropout_p,
        },
        "train": None if train_config is None else train_config.to_dict(),
        "metrics": metrics or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        write_weight_records(fh, _model_arrays(detector, optimizer))


@dataclass
class Checkpoint:
    header: dict
    arrays: dict = field(repr=False)

    @property
    def epoch(self):
        return int(self.header["epoch"])

    def build_detector(self):
        """Reconstruct the saved model (architecture from the header,
        weights and running statistics from the record blob)."""
        meta = self.header["model"]
        routing = RoutingConfig(**self.header["routing"])
        detector = build_detector(
            num_capsules=meta["capsules"], num_classes=meta["classes"],
            seed=0, routing=routing, class_names=meta["class_names"],
            prefix_trainable=meta["prefix_trainable"])
        detector.input_convention = meta["input_convention"]
        self.restore_into(detector)
        return detector

    def restore_into(self, detector):
        meta = self.header["model"]
        if (meta["capsules"] != detector.capsnet.num_capsules
                or meta["classes"] != detector.capsnet.num_classes):
            raise WeightFormatError(
                "checkpoint holds a %d-capsule/%d-class model, target has "
                "%d/%d" % (meta["capsules"], meta["classes"],
                           detector.capsnet.num_capsules,
                           detector.capsnet.num_classes))
        detector.prefix.load_state_dict(self.arrays)
        detector.capsnet.load_state_dict(self.arrays)
        detector.capsnet.load_buffers(self.arrays)

    def restore_optimizer(self, optimizer):
        if not self.header.get("has_optimizer"):
            raise WeightFormatError("checkpoint carries no optimizer state")
        optimizer.load_state_arrays(self.arrays, self.header["adam_t"])

    def train_config(self):
        cfg = self.header.get("train")
        return None if cfg is None else TrainConfig(**cfg)


def load_checkpoint(path):
    from .weights import read_weight_records
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise WeightFormatError(
                "bad checkpoint magic %r (expected %r)"
                % (magic, CHECKPOINT_MAGIC))
        raw = fh.read(4)
        if len(raw) < 4:
            raise WeightFormatError("truncated checkpoint header length")
        (length,) = struct.unpack("<I", raw)
        blob = fh.read(length)
        if len(blob) < length:
            raise WeightFormatError("truncated checkpoint header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WeightFormatError(
                "unreadable checkpoint header: %s" % exc) from exc
        arrays = read_weight_records(fh)
    return Checkpoint(header=header, arrays=arrays)


# -- the driver --------------------------------------------------------------------


def fit(detector, train_units, val_units=None, cfg=None, checkpoint_dir=None,
        resume_from=None, log=None, train_cache=None, val_cache=None):
    """Train for cfg.epochs with per-epoch child rng streams.

    Keeps an "epoch_XXX.ckpt" per cadence point plus "best.ckpt" for the
    highest validation accuracy seen. ``resume_from`` (a Checkpoint)
    restores parameters and optimizer and continues after its epoch with
    the identical seed schedule, reproducing the uninterrupted run
    bit for bit. Prebuilt feature caches for the two splits can be
    passed in (valid only for a frozen prefix).
    """
    cfg = (cfg or TrainConfig()).validate()
    optimizer = Adam(detector.trainable_parameters(), lr=cfg.lr,
                     beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    start_epoch = 0
    if resume_from is not None:
        resume_from.restore_into(detector)
        resume_from.restore_optimizer(optimizer)
        start_epoch = resume_from.epoch + 1

    if detector.prefix.trainable:
        cache = val_cache = None  # features change; caches would go stale
    else:
        cache = train_cache or FeatureCache(detector, list(train_units))
        if val_units and val_cache is None:
            val_cache = FeatureCache(detector, list(val_units))

    history = []
    best_val = -1.0
    for epoch in range(start_epoch, cfg.epochs):
        rng = RngStream(cfg.seed).child(epoch)
        report = train_epoch(detector, train_units, cfg, optimizer, rng,
                             cache=cache, epoch=epoch)
        entry = {"epoch": epoch, "loss": report.mean_loss,
                 "train_accuracy": report.accuracy}
        if val_units:
            val_report = evaluate(detector, val_units, cache=val_cache)
            entry["val_accuracy"] = val_report.accuracy
            if val_report.eer_value is not None:
                entry["val_eer"] = val_report.eer_value
        history.append(entry)
        if log is not None:
            log(entry)
        if checkpoint_dir is not None:
            last = epoch == cfg.epochs - 1
            if (epoch + 1) % cfg.checkpoint_every == 0 or last:
                save_checkpoint(
                    "%s/epoch_%03d.ckpt" % (checkpoint_dir, epoch),
                    detector, optimizer, epoch=epoch, metrics=entry,
                    train_config=cfg)
            if val_units and entry["val_accuracy"] > best_val:
                best_val = entry["val_accuracy"]
                save_checkpoint("%s/best.ckpt" % checkpoint_dir, detector,
                                optimizer, epoch=epoch, metrics=entry,
                                train_config=cfg)
    return history
