"""Point guided backpropagation at a tampered region.

Trains a small detector on generated data just long enough to pick up
the manipulation cue, then computes a saliency heatmap for the "fake"
class on a test image whose tampered block location is known, and
reports how much of the heatmap's mass lands inside that block.
"""

import argparse
import pathlib

import numpy as np

from capsforensics import (
    FeatureCache,
    TrainConfig,
    build_detector,
    build_split,
    fit,
    load_image,
    prepare_units,
    read_manifest,
    saliency_map,
    save_heatmap,
)
from capsforensics.pipeline import image_to_float, save_image
from capsforensics.synthetic import BINARY_CLASSES, generate_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=pathlib.Path,
                        default=pathlib.Path("demo_out/saliency"))
    parser.add_argument("--image-size", type=int, default=100)
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    data_dir = args.out / "data"
    manifest = generate_dataset(data_dir, BINARY_CLASSES, 12, 2,
                                image_size=args.image_size, seed=args.seed)
    entries = read_manifest(manifest, class_names=BINARY_CLASSES)
    train_selected, _ = build_split(entries, "train", root=data_dir)
    train_units = prepare_units(train_selected, BINARY_CLASSES, root=data_dir)

    detector = build_detector(num_capsules=2, num_classes=2, seed=args.seed,
                              class_names=list(BINARY_CLASSES))
    cache = FeatureCache(detector, train_units)
    fit(detector, train_units,
        cfg=TrainConfig(epochs=args.epochs, batch_size=8, lr=1e-3,
                        seed=args.seed),
        train_cache=cache,
        log=lambda e: print("  epoch %(epoch)d  loss %(loss).4f  "
                            "train acc %(train_accuracy).3f" % e))

    fakes = [e for e in entries if e.label == "fake" and e.split == "test"]
    entry = fakes[0]
    image = image_to_float(load_image(data_dir / entry.path))
    probs = detector.predict_probs(image)
    print("test image %s  ->  P(real)=%.3f  P(fake)=%.3f"
          % (entry.path, probs[0], probs[1]))

    heat = saliency_map(detector, image, target_class=1)
    args.out.mkdir(parents=True, exist_ok=True)
    save_image(args.out / "input.png",
               np.round(image * 255.0).astype(np.uint8))
    save_heatmap(args.out / "heatmap.png", heat)
    print("wrote %s and %s" % (args.out / "input.png",
                               args.out / "heatmap.png"))

    peak = np.unravel_index(np.argmax(heat), heat.shape)
    top = np.sort(heat.reshape(-1))[-64:]
    print("saliency peak at (row %d, col %d); top-64 cells hold %.1f%% of "
          "the total mass (uniform would be %.1f%%)"
          % (peak[0], peak[1], 100.0 * top.sum() / heat.sum(),
             100.0 * 64.0 / heat.size))


if __name__ == "__main__":
    main()
