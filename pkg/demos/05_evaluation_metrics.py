"""Forensic evaluation metrics on synthetic score distributions.

Draws genuine and attack scores from two overlapping Gaussians, sweeps
thresholds for FAR/FRR, finds the equal error rate, and shows two
properties worth knowing when comparing systems: EER ignores any
monotone rescaling of scores, and averaging frame scores within a group
tightens the distributions (so group-level EER drops).
"""

import argparse
import pathlib

import numpy as np

from capsforensics import (
    accuracy,
    aggregate_scores,
    confusion_matrix,
    eer,
    far_frr_at,
    hter,
    roc,
)
from capsforensics.metrics import ScoreReport


def threshold_sweep(pos, neg):
    print("threshold sweep (positive = manipulated):")
    print("  thr    FAR    FRR")
    for thr in np.linspace(0.2, 0.8, 7):
        far, frr = far_frr_at(pos, neg, thr)
        print("  %.2f  %.3f  %.3f" % (thr, far, frr))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=pathlib.Path,
                        default=pathlib.Path("demo_out/metrics"))
    parser.add_argument("--seed", type=int, default=5)
    parser.add_argument("--frames-per-group", type=int, default=8)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)

    pos = np.clip(rng.normal(0.62, 0.13, size=400), 0.0, 1.0)
    neg = np.clip(rng.normal(0.38, 0.13, size=400), 0.0, 1.0)
    threshold_sweep(pos, neg)

    base_eer = eer(pos, neg)
    far, frr = far_frr_at(pos, neg, 0.5)
    print("EER %.4f   HTER at threshold 0.5: %.4f"
          % (base_eer, hter(far, frr)))

    labels = np.concatenate([np.ones(len(pos), int), np.zeros(len(neg), int)])
    decisions = (np.concatenate([pos, neg]) >= 0.5).astype(int)
    conf = confusion_matrix(labels, decisions, 2)
    print("confusion at 0.5: %s   accuracy %.4f"
          % (conf.tolist(), accuracy(conf)))

    squeezed = eer(1.0 / (1.0 + np.exp(-6.0 * (pos - 0.5))),
                   1.0 / (1.0 + np.exp(-6.0 * (neg - 0.5))))
    print("EER after sigmoid rescaling of all scores: %.4f (unchanged: %s)"
          % (squeezed, squeezed == base_eer))

    # Group-level scores: average frames-per-group consecutive samples,
    # as a video pipeline would average frame probabilities.
    k = args.frames_per_group
    group_pos = [aggregate_scores([np.array([1.0 - s, s])
                                   for s in pos[i:i + k]])[1]
                 for i in range(0, len(pos) - k + 1, k)]
    group_neg = [aggregate_scores([np.array([1.0 - s, s])
                                   for s in neg[i:i + k]])[1]
                 for i in range(0, len(neg) - k + 1, k)]
    print("per-frame EER %.4f  ->  per-group EER %.4f (%d frames/group)"
          % (base_eer, eer(group_pos, group_neg), k))

    points = np.asarray(roc(pos, neg))
    samples = ([{"probs": [1.0 - s, s], "label": 1} for s in pos]
               + [{"probs": [1.0 - s, s], "label": 0} for s in neg])
    report = ScoreReport.from_samples(samples, num_classes=2)
    args.out.mkdir(parents=True, exist_ok=True)
    csv_path = args.out / "roc.csv"
    csv_path.write_text(report.roc_csv())
    print("swept %d ROC points; wrote the report's curve to %s"
          % (len(points), csv_path))


if __name__ == "__main__":
    main()
