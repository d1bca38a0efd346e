"""Dataset plumbing: manifests, image IO, crops, patches, aggregation."""

import json

import numpy as np
import pytest

from capsforensics import (
    DataError,
    DimensionError,
    ManifestEntry,
    Unit,
    aggregate_scores,
    build_split,
    center_crop,
    crop_region,
    load_image,
    prepare_units,
    read_manifest,
    split_patches,
    write_manifest,
)
from capsforensics.pipeline import (
    image_to_float,
    resize_image,
    resolve_path,
    save_image,
)


def entry(path="img.png", label="real", split="train", group="g0", **kw):
    return ManifestEntry(path=path, label=label, split=split,
                         group_id=group, **kw)


def write_lines(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


# -- manifests ----------------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    entries = [
        entry(),
        entry(path="a/b.png", label="fake", split="val", group="g1",
              bbox=(4, 5, 32, 48), frame_index=7),
    ]
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, entries)
    assert read_manifest(path) == entries


def test_manifest_skips_blank_lines(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(path, [entry()])
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("\n \n")
    assert len(read_manifest(path)) == 1


def test_manifest_reports_invalid_json_with_line_number(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(path, [entry()])
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("{oops\n")
    with pytest.raises(DataError, match="line 2"):
        read_manifest(path)


def test_manifest_missing_key(tmp_path):
    path = tmp_path / "m.jsonl"
    write_lines(path, [{"path": "x.png", "label": "real", "split": "train"}])
    with pytest.raises(DataError, match="group_id"):
        read_manifest(path)


def test_manifest_bad_split(tmp_path):
    path = tmp_path / "m.jsonl"
    write_lines(path, [{"path": "x.png", "label": "real",
                        "split": "holdout", "group_id": "g"}])
    with pytest.raises(DataError, match="split"):
        read_manifest(path)


def test_manifest_unknown_label(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(path, [entry(label="weird")])
    with pytest.raises(DataError, match="weird"):
        read_manifest(path, class_names=["real", "fake"])
    assert read_manifest(path)[0].label == "weird"  # unchecked without classes


def test_manifest_duplicate_path(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(path, [entry(), entry(group="g1")])
    with pytest.raises(DataError, match="duplicate"):
        read_manifest(path)


def test_manifest_bad_bbox(tmp_path):
    for bad in ([1, 2, 3], [1, 2, 3, -4], [0.5, 0, 4, 4]):
        path = tmp_path / "m.jsonl"
        write_lines(path, [{"path": "x.png", "label": "real",
                            "split": "train", "group_id": "g", "bbox": bad}])
        with pytest.raises(DataError, match="bbox"):
            read_manifest(path)


def test_manifest_bad_frame_index(tmp_path):
    path = tmp_path / "m.jsonl"
    write_lines(path, [{"path": "x.png", "label": "real", "split": "train",
                        "group_id": "g", "frame_index": -1}])
    with pytest.raises(DataError, match="frame_index"):
        read_manifest(path)


# -- image io -----------------------------------------------------------------------


def test_image_round_trip_png_and_ppm(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(3, 17, 23), dtype=np.uint8)
    for name in ("img.png", "img.ppm"):
        path = tmp_path / name
        save_image(path, img)
        assert np.array_equal(load_image(path), img)


def test_save_image_quantizes_float(tmp_path):
    img = np.array([0.0, 0.5, 1.0, 1.5], dtype=np.float32)
    img = np.tile(img.reshape(1, 2, 2), (3, 1, 1))
    path = tmp_path / "f.png"
    save_image(path, img)
    back = load_image(path)
    assert np.array_equal(back[0], [[0, 128], [255, 255]])


def test_load_image_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        load_image(tmp_path / "absent.png")


def test_image_to_float():
    out = image_to_float(np.array([0, 51, 255], dtype=np.uint8))
    assert out.dtype == np.float32
    assert np.allclose(out, [0.0, 0.2, 1.0], atol=1e-6)
    passthrough = image_to_float(np.array([0.25, 0.5], dtype=np.float64))
    assert passthrough.dtype == np.float32
    assert np.allclose(passthrough, [0.25, 0.5])


def test_resize_image():
    img = np.full((3, 10, 10), 0.25, dtype=np.float32)
    out = resize_image(img, 7)
    assert out.shape == (3, 7, 7)
    assert np.allclose(out, 0.25, atol=1e-6)
    same = resize_image(np.random.default_rng(1).uniform(
        size=(3, 6, 6)).astype(np.float32), 6)
    assert same.shape == (3, 6, 6)
    with pytest.raises(DimensionError):
        resize_image(np.zeros((10, 10), dtype=np.float32), 5)


# -- patches and crops ----------------------------------------------------------------


def test_split_patches_counts():
    assert len(split_patches(np.zeros((3, 300, 300)), 100)) == 9
    assert len(split_patches(np.zeros((3, 1080, 1920)), 100)) == 190
    assert len(split_patches(np.zeros((3, 250, 130)), 100)) == 2


def test_split_patches_identity_single_tile():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(3, 100, 100))
    patches = split_patches(img, 100)
    assert len(patches) == 1
    assert np.array_equal(patches[0], img)


def test_split_patches_row_major_reassembly():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(3, 200, 300), dtype=np.uint8)
    patches = split_patches(img, 100)
    assert len(patches) == 6
    rebuilt = np.zeros_like(img)
    for k, patch in enumerate(patches):
        i, j = divmod(k, 3)
        rebuilt[:, i * 100:(i + 1) * 100, j * 100:(j + 1) * 100] = patch
    assert np.array_equal(rebuilt, img)


def test_split_patches_validation():
    with pytest.raises(DimensionError, match="smaller"):
        split_patches(np.zeros((3, 64, 64)), 100)
    with pytest.raises(DimensionError):
        split_patches(np.zeros((3, 64, 64)), 0)
    with pytest.raises(DimensionError):
        split_patches(np.zeros((64, 64)), 8)


def test_crop_region():
    rng = np.random.default_rng(4)
    img = rng.uniform(size=(3, 40, 60))
    assert np.array_equal(crop_region(img, (0, 0, 60, 40)), img)
    got = crop_region(img, (10, 5, 20, 30))
    assert np.array_equal(got, img[:, 5:35, 10:30])
    for bad in ((50, 0, 20, 10), (0, 35, 10, 10), (0, 0, 0, 5)):
        with pytest.raises(DataError, match="bbox"):
            crop_region(img, bad)


def test_center_crop():
    rng = np.random.default_rng(5)
    img = rng.uniform(size=(3, 240, 320))
    got = center_crop(img, 240)
    assert np.array_equal(got, img[:, :, 40:280])
    small = rng.uniform(size=(3, 5, 7))
    assert np.array_equal(center_crop(small, 4), small[:, 0:4, 1:5])
    assert np.array_equal(center_crop(small, 5), small[:, :, 1:6])
    with pytest.raises(DataError, match="fit"):
        center_crop(small, 6)
    with pytest.raises(DataError):
        center_crop(small, 0)


# -- aggregation ----------------------------------------------------------------------


def test_aggregate_scores_mean():
    out = aggregate_scores([np.array([0.6, 0.4]), np.array([0.2, 0.8])])
    assert np.allclose(out, [0.4, 0.6], atol=1e-12)
    single = aggregate_scores([np.array([0.3, 0.7])])
    assert np.allclose(single, [0.3, 0.7], atol=1e-12)


def test_aggregate_scores_preserves_total_probability():
    rng = np.random.default_rng(6)
    for _ in range(20):
        k = int(rng.integers(1, 9))
        j = int(rng.integers(2, 5))
        raw = rng.uniform(size=(k, j))
        probs = raw / raw.sum(axis=1, keepdims=True)
        out = aggregate_scores(list(probs))
        assert np.isclose(out.sum(), 1.0, atol=1e-12)


def test_aggregate_scores_validation():
    with pytest.raises(DataError):
        aggregate_scores([])
    with pytest.raises(DimensionError):
        aggregate_scores([np.zeros(2), np.zeros(3)])


# -- split assembly ---------------------------------------------------------------------


def test_build_split_caps_and_orders_frames():
    entries = [entry(path="v0/f%d.png" % i, group="v0", frame_index=i)
               for i in (5, 0, 3, 1, 4, 2, 6)]
    selected, skipped = build_split(entries, "train", frames_per_group=5)
    assert [e.frame_index for e in selected] == [0, 1, 2, 3, 4]
    assert skipped == []
    all_of_them, _ = build_split(entries, "train", frames_per_group=10)
    assert [e.frame_index for e in all_of_them] == list(range(7))


def test_build_split_unindexed_frames_follow_indexed():
    entries = [
        entry(path="a.png", group="v0"),
        entry(path="b.png", group="v0", frame_index=1),
        entry(path="c.png", group="v0"),
        entry(path="d.png", group="v0", frame_index=0),
    ]
    selected, _ = build_split(entries, "train")
    assert [e.path for e in selected] == ["d.png", "b.png", "a.png", "c.png"]


def test_build_split_preserves_group_order_and_split_filter():
    entries = [
        entry(path="1.png", group="late", split="val"),
        entry(path="2.png", group="zeta"),
        entry(path="3.png", group="alpha"),
        entry(path="4.png", group="zeta"),
    ]
    selected, _ = build_split(entries, "train")
    assert [e.path for e in selected] == ["2.png", "4.png", "3.png"]
    val, _ = build_split(entries, "val")
    assert [e.path for e in val] == ["1.png"]


def test_build_split_skips_missing_files(tmp_path):
    img = np.zeros((3, 8, 8), dtype=np.uint8)
    save_image(tmp_path / "present.png", img)
    entries = [entry(path="present.png", group="g"),
               entry(path="absent.png", group="g")]
    selected, skipped = build_split(entries, "train", root=tmp_path,
                                    check_files=True)
    assert [e.path for e in selected] == ["present.png"]
    assert [e.path for e in skipped] == ["absent.png"]
    # without the check everything is selected
    selected, skipped = build_split(entries, "train")
    assert len(selected) == 2 and skipped == []


def test_build_split_is_deterministic():
    rng = np.random.default_rng(7)
    entries = []
    for g in range(20):
        for f in rng.permutation(30):
            entries.append(entry(path="v%d/f%d.png" % (g, f),
                                 group="v%d" % g, frame_index=int(f)))
    first, _ = build_split(entries, "train", frames_per_group=10)
    second, _ = build_split(entries, "train", frames_per_group=10)
    assert first == second


def test_build_split_video_scale_structure():
    entries = []
    for g in range(720):
        for f in range(120):
            entries.append(entry(path="v%03d/f%03d.png" % (g, f),
                                 group="v%03d" % g, frame_index=f))
    selected, skipped = build_split(entries, "train", frames_per_group=100)
    assert len(selected) == 72_000
    assert skipped == []
    assert all(e.frame_index < 100 for e in selected)


def test_build_split_rejects_bad_split():
    with pytest.raises(DataError):
        build_split([], "eval")


def test_resolve_path(tmp_path):
    assert resolve_path("a.png", tmp_path) == str(tmp_path / "a.png")
    assert resolve_path("/abs/a.png", tmp_path) == "/abs/a.png"
    assert resolve_path("a.png") == "a.png"


# -- model-ready units --------------------------------------------------------------------


@pytest.fixture()
def image_dir(tmp_path):
    rng = np.random.default_rng(8)
    img = rng.integers(0, 256, size=(3, 32, 48), dtype=np.uint8)
    save_image(tmp_path / "one.png", img)
    save_image(tmp_path / "two.png", img[:, ::-1].copy())
    return tmp_path, img


def test_prepare_units_basic(image_dir):
    root, img = image_dir
    entries = [entry(path="one.png", label="real", group="g0"),
               entry(path="two.png", label="fake", group="g1")]
    units = prepare_units(entries, ["real", "fake"], root=root)
    assert [u.label for u in units] == [0, 1]
    assert [u.sample_id for u in units] == ["one.png", "two.png"]
    assert [u.group_id for u in units] == ["g0", "g1"]
    assert units[0].image.dtype == np.float32
    assert units[0].image.shape == (3, 32, 48)
    assert np.allclose(units[0].image, img.astype(np.float32) / 255.0)


def test_prepare_units_bbox(image_dir):
    root, img = image_dir
    entries = [entry(path="one.png", group="g0", bbox=(8, 4, 16, 20))]
    units = prepare_units(entries, ["real", "fake"], root=root)
    want = img.astype(np.float32)[:, 4:24, 8:24] / 255.0
    assert np.allclose(units[0].image, want)
    ignored = prepare_units(entries, ["real", "fake"], root=root,
                            use_bbox=False)
    assert ignored[0].image.shape == (3, 32, 48)


def test_prepare_units_center_crop_and_resize(image_dir):
    root, img = image_dir
    entries = [entry(path="one.png", group="g0")]
    units = prepare_units(entries, ["real", "fake"], root=root,
                          crop="center", crop_size=32)
    want = img.astype(np.float32)[:, :, 8:40] / 255.0
    assert np.allclose(units[0].image, want)
    resized = prepare_units(entries, ["real", "fake"], root=root,
                            resize_to=24)
    assert resized[0].image.shape == (3, 24, 24)


def test_prepare_units_patches(image_dir):
    root, img = image_dir
    entries = [entry(path="one.png", group="g0")]
    units = prepare_units(entries, ["real", "fake"], root=root,
                          crop="patch", patch_size=16)
    assert len(units) == 2 * 3
    assert [u.sample_id for u in units] == [
        "one.png#p%d" % k for k in range(6)]
    assert all(u.group_id == "g0" for u in units)
    assert all(u.image.shape == (3, 16, 16) for u in units)
    want = img.astype(np.float32)[:, 0:16, 16:32] / 255.0
    assert np.allclose(units[1].image, want)
    resized = prepare_units(entries, ["real", "fake"], root=root,
                            crop="patch", patch_size=16, resize_to=8)
    assert all(u.image.shape == (3, 8, 8) for u in resized)


def test_prepare_units_validation(image_dir):
    root, _ = image_dir
    entries = [entry(path="one.png", group="g0")]
    with pytest.raises(DataError, match="crop mode"):
        prepare_units(entries, ["real", "fake"], root=root, crop="edges")
    with pytest.raises(DataError, match="crop_size"):
        prepare_units(entries, ["real", "fake"], root=root, crop="center")
    with pytest.raises(DataError, match="patch_size"):
        prepare_units(entries, ["real", "fake"], root=root, crop="patch")
    with pytest.raises(DataError, match="label"):
        prepare_units(entries, ["textured", "smooth"], root=root)
