"""Shared fixtures: in-memory toy units and one session-scale training run."""

import os
import time

import numpy as np
import pytest

from capsforensics import (
    FeatureCache,
    RngStream,
    TrainConfig,
    Unit,
    build_detector,
    build_split,
    evaluate,
    fit,
    prepare_units,
    read_manifest,
    score_units,
    write_scores,
)
from capsforensics.synthetic import (
    BINARY_CLASSES,
    generate_binary_dataset,
    manipulate,
    smooth_texture,
)

_KINDS = {1: "blend", 2: "speckle", 3: "warp"}


def make_units(groups, frames, size, num_classes=2, seed=0):
    """Label-pure grouped units built in memory (no files).

    Group g carries label g % num_classes; the non-clean classes corrupt
    one block of the texture so the classes are actually separable.
    """
    units = []
    for g in range(groups):
        label = g % num_classes
        grng = RngStream(seed).child(g)
        base = smooth_texture(grng.child(0), size)
        for f in range(frames):
            frng = grng.child(f + 1)
            image = np.clip(
                np.roll(base, shift=f, axis=-1)
                + frng.normal(base.shape, std=0.01, dtype=np.float32),
                0.0, 1.0)
            if label:
                image = manipulate(image, _KINDS[label], frng)
            units.append(Unit(sample_id="g%03d/f%d" % (g, f),
                              group_id="g%03d" % g, label=label,
                              image=image))
    return units


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """One full two-class run: generate 500 images per class at 100x100,
    train a light 3-capsule detector, and evaluate every split.

    Expensive (minutes), so it is shared across the whole session and
    only the end-to-end tests request it.
    """
    root = tmp_path_factory.mktemp("toy")
    started = time.time()
    manifest_path = generate_binary_dataset(str(root), seed=11)
    entries = read_manifest(manifest_path, class_names=BINARY_CLASSES)
    data_root = os.path.dirname(manifest_path)
    units = {}
    for split in ("train", "val", "test"):
        selected, skipped = build_split(entries, split, root=data_root,
                                        check_files=True)
        assert not skipped
        units[split] = prepare_units(selected, BINARY_CLASSES, root=data_root)

    detector = build_detector(num_capsules=3, num_classes=2, seed=42)
    caches = {split: FeatureCache(detector, units[split])
              for split in units}
    cfg = TrainConfig(epochs=10, batch_size=25, seed=7, checkpoint_every=10)
    ckpt_dir = root / "ckpt"
    ckpt_dir.mkdir()
    history = fit(detector, units["train"], units["val"], cfg,
                  checkpoint_dir=str(ckpt_dir),
                  train_cache=caches["train"], val_cache=caches["val"])
    train_seconds = time.time() - started

    train_report = evaluate(detector, units["train"], cache=caches["train"])
    test_samples = score_units(detector, units["test"], cache=caches["test"])
    scores_path = root / "scores_test.jsonl"
    write_scores(str(scores_path), test_samples)
    image_report = evaluate(detector, units["test"], cache=caches["test"])
    group_report = evaluate(detector, units["test"], aggregation="group",
                            cache=caches["test"])
    return {
        "root": root,
        "units": units,
        "detector": detector,
        "caches": caches,
        "config": cfg,
        "history": history,
        "train_report": train_report,
        "image_report": image_report,
        "group_report": group_report,
        "test_samples": test_samples,
        "scores_path": str(scores_path),
        "checkpoint_dir": str(ckpt_dir),
        "train_seconds": train_seconds,
    }
