"""Dataset plumbing: manifests, image IO, cropping, patching, and
score aggregation.

A manifest is a JSON-lines file; each record describes one image:

    {"path": ..., "label": ..., "split": "train"|"val"|"test",
     "group_id": ..., "bbox": [x,y,w,h] (optional),
     "frame_index": int (optional)}

``group_id`` ties frames of one video (or patches of one source image)
together so their scores can be averaged into a single decision.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError, DimensionError

SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str
    group_id: str
    bbox: tuple = None
    frame_index: int = None

    def to_dict(self):
        out = {"path": self.path, "label": self.label,
               "split": self.split, "group_id": self.group_id}
        if self.bbox is not None:
            out["bbox"] = list(self.bbox)
        if self.frame_index is not None:
            out["frame_index"] = int(self.frame_index)
        return out


def read_manifest(path, class_names=None):
    """Parse and validate a manifest file into ManifestEntry objects."""
    entries = []
    seen_paths = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError("manifest %s line %d: invalid JSON (%s)"
                                % (path, lineno, exc)) from exc
            entries.append(_entry_from_record(rec, path, lineno, class_names,
                                              seen_paths))
    return entries


def _entry_from_record(rec, path, lineno, class_names, seen_paths):
    where = "manifest %s line %d" % (path, lineno)
    if not isinstance(rec, dict):
        raise DataError("%s: record must be an object" % where)
    for key in ("path", "label", "split", "group_id"):
        if key not in rec:
            raise DataError("%s: missing key %r" % (where, key))
    if rec["split"] not in SPLITS:
        raise DataError("%s: split must be one of %r, got %r"
                        % (where, SPLITS, rec["split"]))
    if class_names is not None and rec["label"] not in class_names:
        raise DataError("%s: label %r not in configured classes %r"
                        % (where, rec["label"], list(class_names)))
    if rec["path"] in seen_paths:
        raise DataError("%s: duplicate path %r" % (where, rec["path"]))
    seen_paths.add(rec["path"])
    bbox = rec.get("bbox")
    if bbox is not None:
        if (not isinstance(bbox, (list, tuple)) or len(bbox) != 4
                or any(int(v) != v or v < 0 for v in bbox)):
            raise DataError("%s: bbox must be [x,y,w,h] of non-negative "
                            "integers, got %r" % (where, bbox))
        bbox = tuple(int(v) for v in bbox)
    frame_index = rec.get("frame_index")
    if frame_index is not None and (int(frame_index) != frame_index
                                    or frame_index < 0):
        raise DataError("%s: frame_index must be a non-negative integer, "
                        "got %r" % (where, frame_index))
    return ManifestEntry(path=rec["path"], label=rec["label"],
                         split=rec["split"], group_id=str(rec["group_id"]),
                         bbox=bbox,
                         frame_index=None if frame_index is None
                         else int(frame_index))


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


# -- images ---------------------------------------------------------------------


def load_image(path):
    """Read a PNG/PPM image as uint8 [3,H,W]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError("cannot read image %s: %s" % (path, exc)) from exc
    return arr.transpose(2, 0, 1).copy()


def save_image(path, array):
    """Write [3,H,W] uint8 (or [0,1] float) as PNG/PPM."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path)


def image_to_float(array):
    """uint8 [0,255] -> float32 [0,1]; float input passes through."""
    arr = np.asarray(array)
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    return arr.astype(np.float32)


def resize_image(image, size):
    """Bilinear resize of [C,H,W] float data to size x size."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise DimensionError("resize expects [C,H,W], got %r" % (arr.shape,))
    channels = [np.asarray(
        Image.fromarray(c, mode="F").resize((size, size), Image.BILINEAR))
        for c in arr]
    return np.stack(channels, axis=0)


# -- crops and patches -------------------------------------------------------------


def split_patches(image, patch_size):
    """Non-overlapping row-major patch tiling; remainder rows/columns at
    the bottom/right are discarded."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise DimensionError(
            "split_patches expects [C,H,W], got %r" % (arr.shape,))
    p = int(patch_size)
    c, h, w = arr.shape
    if p < 1:
        raise DimensionError("patch size must be >= 1, got %d" % p)
    if h < p or w < p:
        raise DimensionError(
            "image %dx%d is smaller than the %d patch size" % (h, w, p))
    patches = []
    for i in range(h // p):
        for j in range(w // p):
            patches.append(arr[:, i * p:(i + 1) * p, j * p:(j + 1) * p].copy())
    return patches


def crop_region(image, bbox):
    """Cut bbox = (x, y, w, h) out of a [C,H,W] image; x runs along
    width, y along height."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise DimensionError(
            "crop_region expects [C,H,W], got %r" % (arr.shape,))
    x, y, w, h = (int(v) for v in bbox)
    _, height, width = arr.shape
    if x < 0 or y < 0 or w < 1 or h < 1 or x + w > width or y + h > height:
        raise DataError(
            "bbox %r out of bounds for %dx%d image"
            % (tuple(bbox), height, width))
    return arr[:, y:y + h, x:x + w].copy()


def center_crop(image, size):
    """Central size x size window; offsets are floor((H-S)/2), floor((W-S)/2)."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise DimensionError(
            "center_crop expects [C,H,W], got %r" % (arr.shape,))
    s = int(size)
    _, h, w = arr.shape
    if s < 1 or s > h or s > w:
        raise DataError(
            "crop size %d does not fit into %dx%d image" % (s, h, w))
    top = (h - s) // 2
    left = (w - s) // 2
    return arr[:, top:top + s, left:left + s].copy()


# -- aggregation --------------------------------------------------------------------


def aggregate_scores(per_unit_probs):
    """Arithmetic mean of probability vectors (patches of one image or
    frames of one video)."""
    if len(per_unit_probs) == 0:
        raise DataError("cannot aggregate an empty score list")
    probs = [np.asarray(p, dtype=np.float64) for p in per_unit_probs]
    dims = {p.shape for p in probs}
    if len(dims) > 1:
        raise DimensionError(
            "probability vectors differ in shape: %r" % (dims,))
    return np.mean(probs, axis=0)


# -- split assembly -----------------------------------------------------------------


def build_split(entries, split, frames_per_group=None, root=None,
                check_files=False):
    """Ordered sample selection for one split.

    Groups keep their first-appearance order from the manifest; inside a
    group, entries are sorted by frame_index (records without one come
    last, in manifest order) and capped at ``frames_per_group``. With
    ``check_files``, entries whose image file is missing go into the
    returned skip list and the run continues.

    Returns (selected_entries, skipped_entries).
    """
    if split not in SPLITS:
        raise DataError("split must be one of %r, got %r" % (SPLITS, split))
    groups = {}
    order = []
    for pos, e in enumerate(entries):
        if e.split != split:
            continue
        if e.group_id not in groups:
            groups[e.group_id] = []
            order.append(e.group_id)
        groups[e.group_id].append((pos, e))

    selected, skipped = [], []
    for gid in order:
        ranked = sorted(groups[gid],
                        key=lambda pe: (0, pe[1].frame_index, pe[0])
                        if pe[1].frame_index is not None else (1, 0, pe[0]))
        picked = [e for _, e in ranked]
        if frames_per_group is not None:
            picked = picked[:int(frames_per_group)]
        for e in picked:
            if check_files and not os.path.exists(resolve_path(e.path, root)):
                skipped.append(e)
            else:
                selected.append(e)
    return selected, skipped


def resolve_path(path, root=None):
    if root is not None and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


# -- model-ready units --------------------------------------------------------------


@dataclass
class Unit:
    """One forward-pass input: a float image plus its score-file identity."""

    sample_id: str
    group_id: str
    label: int
    image: np.ndarray  # float32 [3,h,w] in [0,1]


def prepare_units(entries, class_names, root=None, crop="none",
                  crop_size=None, patch_size=None, resize_to=None,
                  use_bbox=True):
    """Load entries into Units, applying the configured preprocessing.

    Order of operations per image: optional bbox crop (when the entry
    carries one), then the crop mode — "none", "center" (center_crop to
    crop_size), or "patch" (split into patch_size tiles, one Unit per
    tile) — then an optional bilinear resize to resize_to.
    """
    if crop not in ("none", "center", "patch"):
        raise DataError("crop mode must be none/center/patch, got %r" % (crop,))
    if crop == "center" and not crop_size:
        raise DataError("center crop needs crop_size")
    if crop == "patch" and not patch_size:
        raise DataError("patch mode needs patch_size")
    class_index = {name: i for i, name in enumerate(class_names)}
    units = []
    for e in entries:
        if e.label not in class_index:
            raise DataError("label %r not in classes %r"
                            % (e.label, list(class_names)))
        label = class_index[e.label]
        img = image_to_float(load_image(resolve_path(e.path, root)))
        if use_bbox and e.bbox is not None:
            img = crop_region(img, e.bbox)
        if crop == "center":
            img = center_crop(img, crop_size)
        if crop == "patch":
            tiles = split_patches(img, patch_size)
            for k, tile in enumerate(tiles):
                if resize_to:
                    tile = resize_image(tile, resize_to)
                units.append(Unit("%s#p%d" % (e.path, k), e.group_id,
                                  label, tile))
            continue
        if resize_to:
            img = resize_image(img, resize_to)
        units.append(Unit(e.path, e.group_id, label, img))
    return units
