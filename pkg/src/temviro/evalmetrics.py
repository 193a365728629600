"""Detection and segmentation evaluation.

Detections are matched one-to-one to ground-truth circles by overlap
fraction (intersection area over the rasterized truth-disc area). True
positives split into three categories by that fraction:

    TP75: fraction >= 0.75 (the primary threshold)
    TP50: 0.50 <= fraction < 0.75
    TP25: 0.25 <= fraction < 0.50

Precision/recall/F are reported at three cumulative levels: TP75 only,
TP75+TP50, and TP75+TP50+TP25. At a given level, matched pairs below the
level count as a false positive and their truth as a false negative.
Segmentation quality is Dice and IoU over whole masks.

Empty-case conventions: precision and recall are 1.0 when their
denominator is empty; Dice and IoU of two empty masks are 1.0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .classical import CandidateCircle
from .postdetect import DetectedInstance
from .raster import rasterize_disc, require_mask

LEVELS = ("tp75", "tp50c", "tp25c")  # cumulative levels, main first


@dataclass
class DetectionCounts:
    tp75: int = 0
    tp50: int = 0
    tp25: int = 0
    fp: int = 0
    fn: int = 0

    def tp_at(self, level: str) -> int:
        if level == "tp75":
            return self.tp75
        if level == "tp50c":
            return self.tp75 + self.tp50
        if level == "tp25c":
            return self.tp75 + self.tp50 + self.tp25
        raise ValueError(f"unknown level {level!r}")

    def below_level(self, level: str) -> int:
        """Matched pairs that do not count as TP at this level."""
        total = self.tp75 + self.tp50 + self.tp25
        return total - self.tp_at(level)


@dataclass
class MatchResult:
    # (instance_id, gt_id, fraction, category) with category in
    # {"tp75", "tp50", "tp25"}
    matches: list = field(default_factory=list)
    unmatched_instances: list = field(default_factory=list)  # FP ids
    unmatched_gts: list = field(default_factory=list)  # FN ids

    def counts(self) -> DetectionCounts:
        c = DetectionCounts(fp=len(self.unmatched_instances), fn=len(self.unmatched_gts))
        for _, _, _, cat in self.matches:
            setattr(c, cat, getattr(c, cat) + 1)
        return c


def _category(fraction: float) -> str | None:
    if fraction >= 0.75:
        return "tp75"
    if fraction >= 0.50:
        return "tp50"
    if fraction >= 0.25:
        return "tp25"
    return None


def overlap_fraction(instance: DetectedInstance, gt: CandidateCircle,
                     height: int, width: int) -> float:
    """|instance pixels ∩ rasterized truth disc| / |rasterized truth disc|."""
    disc = rasterize_disc(height, width, gt.cx, gt.cy, gt.r)
    disc_area = int(disc.sum())
    if disc_area == 0:
        raise ValueError("ground-truth circle rasterizes to zero area")
    inter = 0
    for row, c0, c1 in instance.spans:
        inter += int(disc[row, c0:c1].sum())
    return inter / disc_area


def match_detections(instances: list[DetectedInstance], gts: list[CandidateCircle],
                     height: int, width: int) -> MatchResult:
    """Greedy one-to-one matching in descending overlap order.

    Only pairs with fraction >= 0.25 are candidates. Ties break toward the
    lower ground-truth index, then the lower instance index, which makes
    the result independent of input ordering.
    """
    pairs = []
    for gi, gt in enumerate(gts):
        disc = rasterize_disc(height, width, gt.cx, gt.cy, gt.r)
        disc_area = int(disc.sum())
        if disc_area == 0:
            raise ValueError("ground-truth circle rasterizes to zero area")
        for ii, inst in enumerate(instances):
            inter = sum(int(disc[row, c0:c1].sum()) for row, c0, c1 in inst.spans)
            frac = inter / disc_area
            if frac >= 0.25:
                pairs.append((frac, gi, ii))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))

    used_g: set[int] = set()
    used_i: set[int] = set()
    result = MatchResult()
    for frac, gi, ii in pairs:
        if gi in used_g or ii in used_i:
            continue
        used_g.add(gi)
        used_i.add(ii)
        result.matches.append((ii, gi, frac, _category(frac)))
    result.unmatched_instances = [ii for ii in range(len(instances)) if ii not in used_i]
    result.unmatched_gts = [gi for gi in range(len(gts)) if gi not in used_g]
    return result


def precision(counts: DetectionCounts, level: str = "tp75") -> float:
    tp = counts.tp_at(level)
    fp = counts.fp + counts.below_level(level)
    if tp + fp == 0:
        return 1.0
    return tp / (tp + fp)


def recall(counts: DetectionCounts, level: str = "tp75") -> float:
    tp = counts.tp_at(level)
    fn = counts.fn + counts.below_level(level)
    if tp + fn == 0:
        return 1.0
    return tp / (tp + fn)


def f_value(p: float, r: float, beta: float = 1.0) -> float:
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    denom = beta * beta * r + p
    if denom == 0.0:
        return 0.0
    return (1.0 + beta * beta) * r * p / denom


def dice(a: np.ndarray, b: np.ndarray) -> float:
    require_mask(a)
    require_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    sa, sb = int(a.sum()), int(b.sum())
    if sa + sb == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return 2.0 * inter / (sa + sb)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    require_mask(a)
    require_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return inter / union


@dataclass
class MetricsReport:
    counts: DetectionCounts
    precision_75: float
    recall_75: float
    f_75: float
    precision_50c: float
    recall_50c: float
    f_50c: float
    precision_25c: float
    recall_25c: float
    f_25c: float
    dice: float
    iou: float

    CSV_FIELDS = (
        "tp75", "tp50", "tp25", "fp", "fn",
        "precision_75", "recall_75", "f_75",
        "precision_50c", "recall_50c", "f_50c",
        "precision_25c", "recall_25c", "f_25c",
        "dice", "iou",
    )

    def row(self) -> dict:
        c = self.counts
        vals = {
            "tp75": c.tp75, "tp50": c.tp50, "tp25": c.tp25, "fp": c.fp, "fn": c.fn,
        }
        for name in self.CSV_FIELDS[5:]:
            vals[name] = getattr(self, name)
        return vals

    def to_json(self) -> dict:
        return self.row()


def report_from_counts(counts: DetectionCounts, dice_value: float, iou_value: float) -> MetricsReport:
    p75, r75 = precision(counts, "tp75"), recall(counts, "tp75")
    p50, r50 = precision(counts, "tp50c"), recall(counts, "tp50c")
    p25, r25 = precision(counts, "tp25c"), recall(counts, "tp25c")
    return MetricsReport(
        counts=counts,
        precision_75=p75, recall_75=r75, f_75=f_value(p75, r75),
        precision_50c=p50, recall_50c=r50, f_50c=f_value(p50, r50),
        precision_25c=p25, recall_25c=r25, f_25c=f_value(p25, r25),
        dice=dice_value, iou=iou_value,
    )


def evaluate_image(
    instances: list[DetectedInstance],
    gts: list[CandidateCircle],
    pred_mask: np.ndarray,
    truth_mask: np.ndarray,
) -> MetricsReport:
    """Full per-image report: match, count, score at every level."""
    if pred_mask.shape != truth_mask.shape:
        raise ValueError("prediction and truth masks must share geometry")
    h, w = truth_mask.shape
    counts = match_detections(instances, gts, h, w).counts()
    return report_from_counts(counts, dice(pred_mask, truth_mask), iou(pred_mask, truth_mask))


def average_row(rows: list[dict]) -> dict:
    """Columnwise mean of report rows (the red-dot average over folds)."""
    if not rows:
        raise ValueError("no rows to average")
    return {k: sum(r[k] for r in rows) / len(rows) for k in MetricsReport.CSV_FIELDS}


def write_reports_csv(rows: list[tuple[str, dict]], path: str) -> None:
    """CSV with one labeled row per report (folds plus an average row).

    Header comment records the level convention: at level L, matched pairs
    below L count as FP and their truths as FN.
    """
    with open(path, "w", newline="") as f:
        f.write("# levels: tp75 | tp75+tp50 | tp75+tp50+tp25; "
                "below-level matches count as fp/fn at that level\n")
        writer = csv.DictWriter(f, fieldnames=("label",) + MetricsReport.CSV_FIELDS)
        writer.writeheader()
        for label, row in rows:
            writer.writerow({"label": label, **row})


def write_reports_json(rows: list[tuple[str, dict]], path: str) -> None:
    with open(path, "w") as f:
        json.dump([{"label": label, **row} for label, row in rows], f, indent=1)
