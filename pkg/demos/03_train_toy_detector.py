"""Train the detector end to end on a generated toy dataset.

Generates a small real-vs-fake image set (smooth textures, with a
tampered block pasted into the fakes), trains the capsule head on
frozen extractor features, evaluates per image and per group, and
round-trips the best checkpoint to show restores are exact.
"""

import argparse
import pathlib
import time

import numpy as np

from capsforensics import (
    FeatureCache,
    TrainConfig,
    build_detector,
    build_split,
    evaluate,
    fit,
    load_checkpoint,
    prepare_units,
    read_manifest,
)
from capsforensics.synthetic import BINARY_CLASSES, generate_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=pathlib.Path,
                        default=pathlib.Path("demo_out/toy_detector"))
    parser.add_argument("--groups", type=int, default=25,
                        help="groups per class (one group = one 'video')")
    parser.add_argument("--frames", type=int, default=2)
    parser.add_argument("--image-size", type=int, default=100)
    parser.add_argument("--epochs", type=int, default=8)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    data_dir = args.out / "data"
    manifest = generate_dataset(data_dir, BINARY_CLASSES, args.groups,
                                args.frames, image_size=args.image_size,
                                seed=args.seed)
    entries = read_manifest(manifest, class_names=BINARY_CLASSES)
    units = {}
    for split in ("train", "val", "test"):
        selected, _ = build_split(entries, split, root=data_dir)
        units[split] = prepare_units(selected, BINARY_CLASSES, root=data_dir)
    print("dataset: %d train / %d val / %d test images at %dpx"
          % (len(units["train"]), len(units["val"]), len(units["test"]),
             args.image_size))

    detector = build_detector(num_capsules=3, num_classes=2, seed=args.seed,
                              class_names=list(BINARY_CLASSES))
    counts = detector.parameter_counts()
    print("model: %d params total (%d frozen extractor, %d trainable head)"
          % (counts["total"], counts["prefix"],
             counts["total"] - counts["prefix"]))

    # Extractor features are cached: computed on first use, then reused
    # by every later epoch and evaluation.
    started = time.monotonic()
    caches = {s: FeatureCache(detector, units[s]) for s in units}

    ckpt_dir = args.out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(epochs=args.epochs, batch_size=8, lr=1e-3,
                      seed=args.seed)
    history = fit(detector, units["train"], val_units=units["val"], cfg=cfg,
                  checkpoint_dir=ckpt_dir, train_cache=caches["train"],
                  val_cache=caches["val"],
                  log=lambda entry: print(
                      "  epoch %(epoch)d  loss %(loss).4f  "
                      "train acc %(train_accuracy).3f  "
                      "val acc %(val_accuracy).3f" % entry))
    print("trained %d epochs in %.1fs"
          % (len(history), time.monotonic() - started))

    for level in ("none", "group"):
        report = evaluate(detector, units["test"], aggregation=level,
                          cache=caches["test"])
        label = "per image" if level == "none" else "per group"
        eer_text = ("n/a" if report.eer_value is None
                    else "%.3f" % report.eer_value)
        print("test %-9s accuracy %.3f  EER %s  confusion %s"
              % (label, report.accuracy, eer_text,
                 report.confusion.tolist()))

    last = sorted(ckpt_dir.glob("epoch_*.ckpt"))[-1]
    restored = load_checkpoint(last).build_detector()
    image = units["test"][0].image
    same = np.array_equal(detector.predict_probs(image),
                          restored.predict_probs(image))
    print("reloading %s reproduces predictions exactly: %s"
          % (last.name, same))


if __name__ == "__main__":
    main()
