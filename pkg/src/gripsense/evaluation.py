"""Classification and timing metrics: ROC, EER, TPR/FPR and instance matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .monitor import HANDHELD, HANDSFREE, PhoneUseInstance


def is_positive(label) -> bool:
    """True for the handheld class (``"handheld"``, 1 or True)."""
    if isinstance(label, str):
        if label == HANDHELD:
            return True
        if label == HANDSFREE:
            return False
        raise ValidationError(f"unknown label {label!r}")
    if label in (0, 1):
        return bool(label)
    raise ValidationError(f"unknown label {label!r}")


@dataclass(frozen=True)
class RocCurve:
    """``(threshold, tpr, fpr)`` triples with thresholds descending.

    A score counts as positive when ``score >= threshold``.  The first point
    uses an infinite threshold, so the curve starts at (0, 0).
    """

    points: tuple[tuple[float, float, float], ...]

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    @classmethod
    def from_rates(cls, fpr, tpr) -> "RocCurve":
        """Curve from explicit (FPR, TPR) pairs; thresholds are left undefined."""
        return cls(tuple((math.nan, float(t), float(f)) for f, t in zip(fpr, tpr)))

    def csv_rows(self) -> list[str]:
        rows = ["threshold,tpr,fpr"]
        rows += [f"{th!r},{t!r},{f!r}" for th, t, f in self.points]
        return rows


def _split(samples):
    scores, labels = [], []
    for score, label in samples:
        scores.append(float(score))
        labels.append(is_positive(label))
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if np.isnan(scores).any():
        raise ValidationError("scores contain NaN")
    return scores, labels


def roc(samples) -> RocCurve:
    """Exact ROC over every distinct score of ``(score, label)`` pairs."""
    scores, labels = _split(samples)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs both classes")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    points = [(math.inf, 0.0, 0.0)]
    points += [(float(s[i]), tp[i] / n_pos, fp[i] / n_neg) for i in ends]
    return RocCurve(tuple((th, float(t), float(f)) for th, t, f in points))


def eer(curve: RocCurve) -> float:
    """Rate where FPR equals 1 - TPR, interpolated linearly between curve points."""
    fpr, tpr = curve.fpr, curve.tpr
    if fpr.size == 0:
        raise ValidationError("empty ROC curve")
    gap = fpr + tpr - 1.0
    hits = np.flatnonzero(gap >= 0)
    if hits.size == 0:
        # the curve never reaches the crossing; use its closest point
        i = int(np.argmax(gap))
        return float((fpr[i] + 1.0 - tpr[i]) / 2)
    i = int(hits[0])
    if gap[i] == 0 or i == 0:
        return float((fpr[i] + 1.0 - tpr[i]) / 2)
    a = -gap[i - 1] / (gap[i] - gap[i - 1])
    return float(fpr[i - 1] + a * (fpr[i] - fpr[i - 1]))


def operating_point(curve: RocCurve, threshold: float) -> tuple[float, float]:
    """``(tpr, fpr)`` at the smallest curve threshold that is ``>= threshold``."""
    best = (0.0, 0.0)
    for th, t, f in curve.points:
        if th >= threshold:
            best = (t, f)
    return best


@dataclass(frozen=True)
class ClassificationReport:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else math.nan

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / (self.tp + self.fp + self.tn + self.fn)

    def to_json(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "threshold": self.threshold, "tpr": clean(self.tpr), "fpr": clean(self.fpr),
                "accuracy": self.accuracy}


def classification_report(samples, threshold: float = 0.5) -> ClassificationReport:
    """Confusion counts of ``(score, label)`` pairs with ``score >= threshold`` as handheld."""
    scores, labels = _split(samples)
    if scores.size == 0:
        raise ValidationError("classification_report needs at least one sample")
    pred = scores >= threshold
    return ClassificationReport(int(np.sum(pred & labels)), int(np.sum(pred & ~labels)),
                                int(np.sum(~pred & ~labels)), int(np.sum(~pred & labels)), threshold)


@dataclass
class TimingReport:
    start_errors: list[float] = field(default_factory=list)
    end_errors: list[float] = field(default_factory=list)
    matched: int = 0
    unmatched_truth: int = 0
    spurious_pred: int = 0
    n_truth: int = 0
    duration_hours: float | None = None

    @property
    def median_start(self) -> float | None:
        return round(float(np.median(self.start_errors)), 9) if self.start_errors else None

    @property
    def median_end(self) -> float | None:
        return round(float(np.median(self.end_errors)), 9) if self.end_errors else None

    @property
    def detection_rate(self) -> float | None:
        return self.matched / self.n_truth if self.n_truth else None

    @property
    def fp_per_hour(self) -> float | None:
        if not self.duration_hours:
            return None
        return self.spurious_pred / self.duration_hours

    def to_json(self) -> dict:
        return {"start_errors": self.start_errors, "end_errors": self.end_errors,
                "median_start": self.median_start, "median_end": self.median_end,
                "matched": self.matched, "unmatched_truth": self.unmatched_truth,
                "spurious_pred": self.spurious_pred, "detection_rate": self.detection_rate,
                "fp_per_hour": self.fp_per_hour}


def iou(a: PhoneUseInstance, b: PhoneUseInstance) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union if union > 0 else 0.0


def _pair_key(a: PhoneUseInstance, b: PhoneUseInstance):
    # symmetric in (a, b) so that swapping the lists gives the same matching
    return (min(a.start, b.start), max(a.start, b.start), min(a.end, b.end), max(a.end, b.end))


def match_instances(pred, truth, iou_min: float = 0.3, duration: float | None = None) -> TimingReport:
    """Greedy one-to-one matching of handheld instances by descending IoU.

    Pairs below ``iou_min`` never match.  ``duration`` (seconds of recording)
    enables the false-positive rate per hour.
    """
    if not 0 < iou_min <= 1:
        raise ValidationError("iou_min must lie in (0, 1]")
    p = [x for x in pred if x.kind == HANDHELD]
    t = [x for x in truth if x.kind == HANDHELD]
    candidates = []
    for i, a in enumerate(t):
        for j, b in enumerate(p):
            score = iou(a, b)
            if score >= iou_min:
                candidates.append((-score, _pair_key(a, b), i, j))
    candidates.sort(key=lambda c: (c[0], c[1]))
    used_t, used_p, pairs = set(), set(), []
    for _, key, i, j in candidates:
        if i in used_t or j in used_p:
            continue
        used_t.add(i)
        used_p.add(j)
        pairs.append((key, t[i], p[j]))
    pairs.sort(key=lambda c: c[0])
    report = TimingReport(
        start_errors=[round(abs(b.start - a.start), 9) for _, a, b in pairs],
        end_errors=[round(abs(b.end - a.end), 9) for _, a, b in pairs],
        matched=len(pairs), unmatched_truth=len(t) - len(pairs),
        spurious_pred=len(p) - len(pairs), n_truth=len(t),
        duration_hours=duration / 3600.0 if duration else None)
    return report
