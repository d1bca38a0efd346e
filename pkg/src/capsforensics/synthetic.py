"""Procedural toy datasets for end-to-end checks.

Images are smooth random textures; "manipulated" classes corrupt one
block of the image with operations that change its local statistics
(low-pass blending, speckle noise, row warping). Frames of one group
share a base texture and manipulation placement, mimicking video frames
from one source, so group-level score aggregation has something real to
aggregate. Splits are assigned per group, never per frame.
"""

import os

import numpy as np

from .pipeline import ManifestEntry, resize_image, save_image, write_manifest
from .rng import RngStream

BINARY_CLASSES = ("real", "fake")
MULTICLASS_CLASSES = ("real", "blend", "speckle", "warp")


def smooth_texture(rng, size, cells=7):
    """Band-limited color texture: low-res uniform noise, upsampled."""
    coarse = rng.uniform((3, cells, cells), low=0.25, high=0.75,
                         dtype=np.float32)
    return resize_image(coarse, size)


def _lowpass(block):
    """Cheap strong blur: bilinear down 4x and back up."""
    size = block.shape[-1]
    small = resize_image(block, max(2, size // 4))
    return resize_image(small, size)


def _apply_blend(block, rng):
    blurred = _lowpass(block)
    speckle = rng.normal(block.shape, std=0.18, dtype=np.float32)
    return np.clip(0.15 * block + 0.85 * blurred + speckle, 0.0, 1.0)


def _apply_speckle(block, rng):
    noise = rng.normal(block.shape, std=0.3, dtype=np.float32)
    return np.clip(block + noise, 0.0, 1.0)


def _apply_warp(block, rng):
    size = block.shape[-1]
    phase = float(rng.uniform((), low=0.0, high=2.0 * np.pi))
    out = block.copy()
    for row in range(size):
        shift = int(round(np.sin(phase + row / 2.5) * size / 5.0))
        out[:, row, :] = np.roll(block[:, row, :], shift, axis=-1)
    return _lowpass(out) * 0.5 + out * 0.5


_MANIPULATIONS = {"fake": _apply_blend, "blend": _apply_blend,
                  "speckle": _apply_speckle, "warp": _apply_warp}


def manipulate(image, kind, rng, block_frac=0.45):
    """Corrupt one block (side = block_frac * image side) in place."""
    out = image.copy()
    size = image.shape[-1]
    block = max(8, int(size * block_frac))
    top = int(rng.integers(0, size - block + 1))
    left = int(rng.integers(0, size - block + 1))
    region = out[:, top:top + block, left:left + block]
    out[:, top:top + block, left:left + block] = \
        _MANIPULATIONS[kind](region, rng)
    return out


def _split_for(group_index, total, fractions):
    train_end = int(total * fractions[0])
    val_end = train_end + max(1, int(total * fractions[1]))
    if group_index < train_end:
        return "train"
    if group_index < val_end:
        return "val"
    return "test"


def generate_dataset(out_dir, classes, groups_per_class, frames_per_group,
                     image_size=100, seed=0, split_fractions=(0.7, 0.1, 0.2)):
    """Write PNGs plus manifest.jsonl under ``out_dir``; returns the
    manifest path. Class index 0 is left clean; other classes receive
    their named manipulation."""
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    entries = []
    for ci, cls in enumerate(classes):
        for g in range(groups_per_class):
            grng = RngStream(seed).child(ci).child(g)
            base = smooth_texture(grng.child(0), image_size)
            split = _split_for(g, groups_per_class, split_fractions)
            group_id = "%s%04d" % (cls, g)
            for f in range(frames_per_group):
                frng = grng.child(f + 1)
                frame = np.roll(base, shift=f, axis=-1)
                frame = np.clip(
                    frame * float(frng.uniform((), 0.92, 1.08))
                    + frng.normal(frame.shape, std=0.01, dtype=np.float32),
                    0.0, 1.0)
                if ci != 0:
                    frame = manipulate(frame, cls, frng)
                name = "%s_f%02d.png" % (group_id, f)
                save_image(os.path.join(image_dir, name), frame)
                entries.append(ManifestEntry(
                    path=os.path.join("images", name), label=cls,
                    split=split, group_id=group_id, frame_index=f))
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(manifest_path, entries)
    return manifest_path


def generate_binary_dataset(out_dir, groups_per_class=100,
                            frames_per_group=5, image_size=100, seed=0):
    """Two-class set: clean textures vs locally blended/warped ones.

    Defaults yield 500 images per class at 100x100 with group-pure
    train/val/test splits."""
    return generate_dataset(out_dir, BINARY_CLASSES, groups_per_class,
                            frames_per_group, image_size, seed)


def generate_multiclass_dataset(out_dir, groups_per_class=25,
                                frames_per_group=4, image_size=100, seed=0):
    """Four-class set: clean plus three manipulation families."""
    return generate_dataset(out_dir, MULTICLASS_CLASSES, groups_per_class,
                            frames_per_group, image_size, seed)
