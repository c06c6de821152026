"""Challenge metrics: multi-class panoptic quality (mPQ+) and count R².

mPQ+ aggregates TP/FP/FN and matched IoU per class over the whole dataset
before computing each class's PQ, then averages the six classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import NUCLEUS_CLASSES, as_label_image

N_NUCLEUS = len(NUCLEUS_CLASSES)


@dataclass
class Match:
    pairs: list[tuple[int, int, float]]
    unmatched_gt: list[int]
    unmatched_pred: list[int]


@dataclass
class ClassStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0

    def pq(self) -> float:
        return pq(self)


@dataclass
class MatchStats:
    """Per-class statistics for nucleus classes 1..6."""

    per_class: dict[int, ClassStats] = field(
        default_factory=lambda: {k: ClassStats() for k in range(1, N_NUCLEUS + 1)}
    )

    def merge(self, other: "MatchStats") -> "MatchStats":
        out = MatchStats()
        for k in out.per_class:
            a, b = self.per_class[k], other.per_class[k]
            out.per_class[k] = ClassStats(a.tp + b.tp, a.fp + b.fp, a.fn + b.fn, a.iou_sum + b.iou_sum)
        return out

    def to_dict(self) -> dict:
        return {
            NUCLEUS_CLASSES[k - 1]: {"tp": s.tp, "fp": s.fp, "fn": s.fn, "iou_sum": s.iou_sum}
            for k, s in self.per_class.items()
        }


def _overlap_table(gt: np.ndarray, pred: np.ndarray):
    """Sizes of every instance and of every nonzero (gt, pred) intersection."""
    g, p = gt.ravel().astype(np.int64), pred.ravel().astype(np.int64)
    gt_ids, gt_sizes = np.unique(g[g > 0], return_counts=True)
    pr_ids, pr_sizes = np.unique(p[p > 0], return_counts=True)
    both = (g > 0) & (p > 0)
    key = g[both] * (int(p.max()) + 1) + p[both]
    keys, inter = np.unique(key, return_counts=True)
    return (dict(zip(gt_ids.tolist(), gt_sizes.tolist())),
            dict(zip(pr_ids.tolist(), pr_sizes.tolist())),
            keys, inter, int(p.max()) + 1)


def match_instances(gt, pred) -> Match:
    """Pair gt and predicted instances whose IoU exceeds 0.5.

    IoU > 0.5 makes each match unique on both sides, so no assignment
    solver is needed. Pairs are sorted by gt id.
    """
    gt, pred = as_label_image(gt), as_label_image(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    if gt.size == 0:
        return Match([], [], [])
    gt_sizes, pr_sizes, keys, inter, base = _overlap_table(gt, pred)
    pairs = []
    for key, n in zip(keys.tolist(), inter.tolist()):
        g, p = divmod(key, base)
        iou = n / (gt_sizes[g] + pr_sizes[p] - n)
        if iou > 0.5:
            pairs.append((g, p, iou))
    pairs.sort()
    matched_g = {g for g, _, _ in pairs}
    matched_p = {p for _, p, _ in pairs}
    return Match(
        pairs,
        sorted(g for g in gt_sizes if g not in matched_g),
        sorted(p for p in pr_sizes if p not in matched_p),
    )


def _select(m: np.ndarray, classes: dict[int, int], k: int) -> np.ndarray:
    keep = [i for i, c in classes.items() if c == k]
    return np.where(np.isin(m, keep), m, 0)


def accumulate(stats: MatchStats, gt, gt_classes: dict[int, int], pred, pred_classes: dict[int, int]) -> MatchStats:
    """Add one image's per-class matches to ``stats`` and return the merged total.

    ``gt_classes`` / ``pred_classes`` map instance id to class 1..6. Only
    instances of the same class are matched against each other.
    """
    gt, pred = as_label_image(gt), as_label_image(pred)
    image = MatchStats()
    for k in image.per_class:
        match = match_instances(_select(gt, gt_classes, k), _select(pred, pred_classes, k))
        s = image.per_class[k]
        s.tp = len(match.pairs)
        s.fp = len(match.unmatched_pred)
        s.fn = len(match.unmatched_gt)
        s.iou_sum = float(sum(iou for _, _, iou in match.pairs))
    return stats.merge(image)


def pq(s: ClassStats) -> float:
    """Matched IoU sum over ``tp + fp/2 + fn/2``; 0 when nothing was seen."""
    denom = s.tp + 0.5 * s.fp + 0.5 * s.fn
    return s.iou_sum / denom if denom > 0 else 0.0


def mpq_plus(stats: MatchStats) -> float:
    return sum(pq(stats.per_class[k]) for k in range(1, N_NUCLEUS + 1)) / N_NUCLEUS


def count_table(class_maps: list[dict[int, int]]) -> np.ndarray:
    """Per-image nucleus counts, shape ``(images, 6)``."""
    counts = np.zeros((len(class_maps), N_NUCLEUS), dtype=np.int64)
    for row, classes in enumerate(class_maps):
        for c in classes.values():
            counts[row, c - 1] += 1
    return counts


@dataclass
class R2Result:
    per_class: list[float]
    mean: float
    zero_variance: list[int]  # classes where the convention was applied


def r2_counts(gt, pred) -> R2Result:
    """Coefficient of determination of predicted counts, per class and averaged.

    A class whose gt counts have zero variance scores 1 when predicted
    exactly and 0 otherwise.
    """
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape or gt.ndim != 2:
        raise ValueError(f"count tables must match as (images, classes): {gt.shape} vs {pred.shape}")
    if gt.shape[0] < 2:
        raise ValueError("R² needs at least 2 images")
    scores, flagged = [], []
    for k in range(gt.shape[1]):
        residual = float(np.sum((pred[:, k] - gt[:, k]) ** 2))
        total = float(np.sum((gt[:, k] - gt[:, k].mean()) ** 2))
        if total == 0.0:
            flagged.append(k + 1)
            scores.append(1.0 if residual == 0.0 else 0.0)
        else:
            scores.append(1.0 - residual / total)
    return R2Result(scores, float(np.mean(scores)), flagged)


@dataclass
class MetricsReport:
    pq_per_class: dict[str, float]
    mpq_plus: float
    r2_per_class: dict[str, float] | None
    r2_mean: float | None
    absent_classes: list[str] = field(default_factory=list)
    zero_variance_classes: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    images: list[dict] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pq_per_class": self.pq_per_class,
            "mpq_plus": self.mpq_plus,
            "r2_per_class": self.r2_per_class,
            "r2_mean": self.r2_mean,
            "absent_classes": self.absent_classes,
            "zero_variance_classes": self.zero_variance_classes,
            "stats": self.stats,
            "images": self.images,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def evaluate_dataset(items, params: dict | None = None) -> MetricsReport:
    """Score a dataset given ``(name, gt, gt_classes, pred, pred_classes)`` tuples.

    Images are merged in name order so float sums do not depend on input
    order. R² is reported as None for fewer than two images.
    """
    items = sorted(items, key=lambda t: t[0])
    stats = MatchStats()
    images = []
    for name, gt, gt_cls, pred, pred_cls in items:
        before = stats
        stats = accumulate(stats, gt, gt_cls, pred, pred_cls)
        images.append({
            "image": name,
            "tp": sum(stats.per_class[k].tp - before.per_class[k].tp for k in stats.per_class),
            "fp": sum(stats.per_class[k].fp - before.per_class[k].fp for k in stats.per_class),
            "fn": sum(stats.per_class[k].fn - before.per_class[k].fn for k in stats.per_class),
            "gt_instances": len(gt_cls),
            "pred_instances": len(pred_cls),
        })
    pq_per_class = {NUCLEUS_CLASSES[k - 1]: pq(stats.per_class[k]) for k in stats.per_class}
    absent = [NUCLEUS_CLASSES[k - 1] for k, s in stats.per_class.items() if s.tp + s.fp + s.fn == 0]
    r2_per_class = r2_mean = None
    zero_var = []
    if len(items) >= 2:
        r2 = r2_counts(count_table([t[2] for t in items]), count_table([t[4] for t in items]))
        r2_per_class = dict(zip(NUCLEUS_CLASSES, r2.per_class))
        r2_mean = r2.mean
        zero_var = [NUCLEUS_CLASSES[k - 1] for k in r2.zero_variance]
    return MetricsReport(
        pq_per_class=pq_per_class,
        mpq_plus=mpq_plus(stats),
        r2_per_class=r2_per_class,
        r2_mean=r2_mean,
        absent_classes=absent,
        zero_variance_classes=zero_var,
        stats=stats.to_dict(),
        images=images,
        params=dict(params or {}),
    )
