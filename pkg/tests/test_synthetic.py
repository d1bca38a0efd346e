"""Procedural toy datasets: textures, manipulations, manifest structure."""

import os

import numpy as np
import pytest

from capsforensics import RngStream, load_image, read_manifest
from capsforensics.synthetic import (
    BINARY_CLASSES,
    MULTICLASS_CLASSES,
    generate_dataset,
    generate_multiclass_dataset,
    manipulate,
    smooth_texture,
)


@pytest.fixture(scope="module")
def small_binary(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    manifest = generate_dataset(root, BINARY_CLASSES, groups_per_class=10,
                                frames_per_group=3, image_size=32, seed=5)
    return root, manifest, read_manifest(manifest, class_names=BINARY_CLASSES)


def test_dataset_counts_and_files(small_binary):
    root, manifest, entries = small_binary
    assert os.path.basename(manifest) == "manifest.jsonl"
    assert len(entries) == 2 * 10 * 3
    labels = [e.label for e in entries]
    assert labels.count("real") == 30
    assert labels.count("fake") == 30
    for e in entries:
        assert e.frame_index in (0, 1, 2)
        img = load_image(os.path.join(root, e.path))
        assert img.shape == (3, 32, 32)
        assert img.dtype == np.uint8


def test_dataset_splits_are_group_pure(small_binary):
    _, _, entries = small_binary
    by_group = {}
    for e in entries:
        by_group.setdefault(e.group_id, set()).add(e.split)
        assert e.group_id.startswith(e.label)
    assert all(len(splits) == 1 for splits in by_group.values())
    for cls in BINARY_CLASSES:
        splits = [next(iter(by_group["%s%04d" % (cls, g)]))
                  for g in range(10)]
        assert splits.count("train") == 7
        assert splits.count("val") == 1
        assert splits.count("test") == 2


def test_dataset_generation_is_deterministic(small_binary, tmp_path):
    root, manifest, entries = small_binary
    again = generate_dataset(tmp_path, BINARY_CLASSES, groups_per_class=10,
                             frames_per_group=3, image_size=32, seed=5)
    assert read_manifest(again) == entries
    for e in entries[::7]:
        with open(os.path.join(root, e.path), "rb") as fh:
            first = fh.read()
        with open(os.path.join(tmp_path, e.path), "rb") as fh:
            second = fh.read()
        assert first == second


def test_dataset_seed_changes_pixels(small_binary, tmp_path):
    root, _, entries = small_binary
    other = generate_dataset(tmp_path, BINARY_CLASSES, groups_per_class=10,
                             frames_per_group=3, image_size=32, seed=6)
    entries_b = read_manifest(other)
    assert [e.path for e in entries_b] == [e.path for e in entries]
    img_a = load_image(os.path.join(root, entries[0].path))
    img_b = load_image(os.path.join(tmp_path, entries[0].path))
    assert not np.array_equal(img_a, img_b)


def test_smooth_texture_is_banded_and_deterministic():
    tex = smooth_texture(RngStream(3), 64)
    assert tex.shape == (3, 64, 64)
    assert tex.min() >= 0.2 and tex.max() <= 0.8
    assert np.array_equal(tex, smooth_texture(RngStream(3), 64))
    assert not np.array_equal(tex, smooth_texture(RngStream(4), 64))


@pytest.mark.parametrize("kind", sorted(set(MULTICLASS_CLASSES[1:]) | {"fake"}))
def test_manipulate_corrupts_one_block(kind):
    base = smooth_texture(RngStream(7), 64)
    out = manipulate(base, kind, RngStream(9))
    assert out.shape == base.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    changed = np.any(out != base, axis=0)
    assert changed.any()
    rows = np.flatnonzero(changed.any(axis=1))
    cols = np.flatnonzero(changed.any(axis=0))
    block = max(8, int(64 * 0.45))
    assert rows[-1] - rows[0] + 1 <= block
    assert cols[-1] - cols[0] + 1 <= block
    # pixels outside the block bounding box are untouched
    mask = np.zeros_like(changed)
    mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] = True
    assert np.array_equal(out[:, ~mask], base[:, ~mask])


def test_multiclass_dataset(tmp_path):
    manifest = generate_multiclass_dataset(tmp_path, groups_per_class=3,
                                           frames_per_group=2, image_size=32,
                                           seed=1)
    entries = read_manifest(manifest, class_names=MULTICLASS_CLASSES)
    assert len(entries) == 4 * 3 * 2
    assert {e.label for e in entries} == set(MULTICLASS_CLASSES)
    for e in entries:
        assert os.path.exists(os.path.join(tmp_path, e.path))
