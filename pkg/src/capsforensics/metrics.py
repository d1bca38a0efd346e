"""Evaluation metrics for detection experiments.

Scores are probabilities of the positive (manipulated) class. The
threshold convention throughout: a sample is accepted as positive when
score >= t, so FAR(t) = P(negative scores >= t) and
FRR(t) = P(positive scores < t). The equal error rate is found by a
full sweep over distinct scores with linear interpolation between the
bracketing sweep points — interpolation happens in rate space, which
makes the result exactly invariant under strictly monotone rescalings
of the scores.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError


def confusion_matrix(labels, predictions, num_classes):
    """Count matrix with true classes as rows, predicted as columns."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ParameterError(
            "labels %r and predictions %r differ in shape"
            % (labels.shape, predictions.shape))
    for name, arr in (("labels", labels), ("predictions", predictions)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ParameterError(
                "%s must lie in [0, %d), got range [%d, %d]"
                % (name, num_classes, arr.min(), arr.max()))
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, predictions), 1)
    return conf


def accuracy(conf):
    """Fraction of correct decisions: trace over total count."""
    conf = np.asarray(conf)
    total = int(conf.sum())
    if total <= 0:
        raise DataError("cannot compute accuracy of zero samples")
    return float(np.trace(conf)) / total


def far_frr_at(pos_scores, neg_scores, threshold):
    """(FAR, FRR) of the accept-if-score>=threshold rule."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise DataError("both score lists must be non-empty")
    return (float((neg >= threshold).mean()),
            float((pos < threshold).mean()))


def _sweep(pos_scores, neg_scores):
    """FAR/FRR over thresholds -inf, every distinct score, +inf."""
    pos = np.sort(np.asarray(pos_scores, dtype=np.float64))
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise DataError("both score lists must be non-empty")
    thresholds = np.concatenate(
        [[-np.inf], np.unique(np.concatenate([pos, neg])), [np.inf]])
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size
    far = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    return thresholds, far, frr


def eer(pos_scores, neg_scores):
    """Equal error rate.

    FAR - FRR falls monotonically over the sweep from +1 to -1; the
    crossing is located and, when it falls between two sweep points,
    linearly interpolated in (FAR, FRR) coordinates.
    """
    _, far, frr = _sweep(pos_scores, neg_scores)
    diff = far - frr
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0:
        return float(far[i])
    d0, d1 = diff[i - 1], diff[i]
    alpha = d0 / (d0 - d1)
    return float(far[i - 1] + alpha * (far[i] - far[i - 1]))


def hter(far, frr):
    """Half total error rate (FAR + FRR)/2; both rates must be in [0,1]."""
    for name, rate in (("far", far), ("frr", frr)):
        if not 0.0 <= rate <= 1.0:
            raise ParameterError("%s must be in [0,1], got %r" % (name, rate))
    return (far + frr) / 2.0


def roc(pos_scores, neg_scores):
    """(FAR, TPR) pairs over the full sweep, from (0,0) up to (1,1)."""
    _, far, frr = _sweep(pos_scores, neg_scores)
    points = [(float(f), float(1.0 - r)) for f, r in zip(far, frr)]
    return points[::-1]


# -- score records and reports ---------------------------------------------------


def write_scores(path, samples):
    """Persist per-sample scores as JSON-lines
    {sample_id, group_id, label, probs[]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(
                {"sample_id": s["sample_id"], "group_id": s["group_id"],
                 "label": int(s["label"]),
                 "probs": [float(p) for p in s["probs"]]},
                sort_keys=True) + "\n")


def read_scores(path):
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError("score file %s line %d: %s"
                                % (path, lineno, exc)) from exc
            for key in ("sample_id", "group_id", "label", "probs"):
                if key not in rec:
                    raise DataError("score file %s line %d misses %r"
                                    % (path, lineno, key))
            samples.append(rec)
    return samples


@dataclass
class ScoreReport:
    """Per-sample probabilities plus the aggregate metric block.

    ``eer_value``/``hter_value`` are None for more than two classes
    (they are defined against a single positive class).
    """

    samples: list
    num_classes: int
    threshold: float
    confusion: np.ndarray
    accuracy: float
    eer_value: float = None
    hter_value: float = None
    far: float = None
    frr: float = None
    roc_points: list = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples, num_classes, threshold=0.5):
        """Score a list of {sample_id, group_id, label, probs} records.

        Binary decisions use probs[1] >= threshold; more classes use
        the argmax. EER/HTER/ROC are filled for the binary case only.
        """
        if not samples:
            raise DataError("cannot build a report from zero samples")
        labels = np.array([int(s["label"]) for s in samples])
        try:
            probs = np.array([s["probs"] for s in samples], dtype=np.float64)
        except ValueError as exc:
            raise DataError(
                "samples carry ragged probability lists: %s" % exc) from exc
        if probs.ndim != 2 or probs.shape[1] != num_classes:
            raise DataError(
                "expected %d probabilities per sample, got shape %r"
                % (num_classes, probs.shape))
        if num_classes == 2:
            predictions = (probs[:, 1] >= threshold).astype(np.int64)
        else:
            predictions = probs.argmax(axis=1)
        conf = confusion_matrix(labels, predictions, num_classes)
        report = cls(samples=list(samples), num_classes=num_classes,
                     threshold=threshold, confusion=conf,
                     accuracy=accuracy(conf))
        if num_classes == 2:
            pos = probs[labels == 1, 1]
            neg = probs[labels == 0, 1]
            if pos.size and neg.size:
                report.eer_value = eer(pos, neg)
                report.far, report.frr = far_frr_at(pos, neg, threshold)
                report.hter_value = hter(report.far, report.frr)
                report.roc_points = roc(pos, neg)
        return report

    def to_dict(self):
        out = {
            "num_samples": len(self.samples),
            "num_classes": self.num_classes,
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
        }
        if self.eer_value is not None:
            out.update({"eer": self.eer_value, "far": self.far,
                        "frr": self.frr, "hter": self.hter_value})
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self):
        lines = ["samples:  %d" % len(self.samples),
                 "accuracy: %.4f" % self.accuracy]
        if self.eer_value is not None:
            lines.append("eer:      %.4f" % self.eer_value)
            lines.append("hter:     %.4f (far %.4f, frr %.4f at t=%g)"
                         % (self.hter_value, self.far, self.frr, self.threshold))
        lines.append("confusion (rows=true, cols=predicted):")
        for row in self.confusion:
            lines.append("  " + " ".join("%6d" % v for v in row))
        return "\n".join(lines) + "\n"

    def roc_csv(self):
        lines = ["far,tpr"]
        lines += ["%.10g,%.10g" % (f, t) for f, t in self.roc_points]
        return "\n".join(lines) + "\n"
