"""Scoring for nuclei instance segmentation and classification.

Implements the metric stack used for colon-nuclei benchmarking:

* binary panoptic quality (PQ) per scene — instances matched by mask
  IoU > 0.5, PQ = sum(matched IoU) / (TP + FP/2 + FN/2);
* per-class PQ+ — the same statistic with TP/FP/FN and the IoU sum
  aggregated over the *whole dataset* before the division, which rewards
  rare classes fairly compared to averaging per-scene ratios;
* mPQ+ — mean of PQ+ over the classes that occur anywhere (in ground truth
  or prediction); classes absent from both sides everywhere are excluded
  rather than scored zero;
* multi-class R² between per-scene ground-truth and predicted cell counts;
* an element-wise cross-entropy over pixel probability maps, kept here as a
  validation utility for producer outputs.

Matching with the strict >0.5 rule is provably one-to-one (two predictions
cannot both overlap one object by more than half of the union), so no
assignment optimization is needed and results cannot depend on input order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    NUM_CLASSES,
    SOURCE_TRUTH,
    Detection,
    DetectionSet,
    LabeledScene,
    ValidationError,
    extract_detections,
    mask_iou,
)

LOG_CLAMP = 1e-12  # floor for probabilities inside the log


# ---------------------------------------------------------------------------
# pixel-wise cross entropy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel categorical distribution, shape (M, K), rows sum to one."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 2:
            raise ValidationError(
                f"probability map must be (M, K) with K >= 2, got {values.shape}"
            )
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")
        sums = values.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > 1e-6)[0]
        if bad.size:
            raise ValidationError(
                f"pixel {bad[0]} probabilities sum to {sums[bad[0]]!r}, not 1"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def num_pixels(self) -> int:
        return self.values.shape[0]

    @property
    def num_categories(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class OneHotLabelMap:
    """Per-pixel one-hot ground truth, shape (M, K)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValidationError(f"label map must be (M, K), got {values.shape}")
        if not np.isin(values, (0, 1)).all():
            raise ValidationError("one-hot entries must be 0 or 1")
        values = values.astype(np.uint8)
        rows = values.sum(axis=1)
        bad = np.nonzero(rows != 1)[0]
        if bad.size:
            raise ValidationError(
                f"pixel {bad[0]} has {rows[bad[0]]} set categories, expected 1"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_labels(cls, labels: np.ndarray, num_categories: int) -> "OneHotLabelMap":
        labels = np.asarray(labels).ravel()
        if labels.size and (labels.min() < 0 or labels.max() >= num_categories):
            raise ValidationError("labels outside 0..K-1")
        eye = np.eye(num_categories, dtype=np.uint8)
        return cls(eye[labels])

    @property
    def num_pixels(self) -> int:
        return self.values.shape[0]

    @property
    def num_categories(self) -> int:
        return self.values.shape[1]


def cross_entropy(y: OneHotLabelMap, p: ProbabilityMap) -> float:
    """Mean cross entropy over all pixels and categories.

    Returns −(1 / (M·K)) · Σ_m Σ_k y[m,k] · log p[m,k], with probabilities
    floored at ``LOG_CLAMP`` so degenerate inputs stay finite. Zero exactly
    when ``p`` is one-hot and agrees with ``y`` everywhere.
    """
    if y.values.shape != p.values.shape:
        raise ValidationError(
            f"shape mismatch: labels {y.values.shape} vs probabilities "
            f"{p.values.shape}"
        )
    m, k = p.values.shape
    picked = p.values[y.values == 1]
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).sum() / (m * k))


# ---------------------------------------------------------------------------
# instance matching and panoptic quality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchResult:
    """One-to-one IoU>0.5 matching between two detection lists.

    `pairs` holds (gt_id, pred_id, mask_iou) in canonical ground-truth
    order; `unmatched_gt` / `unmatched_pred` hold the leftover ids.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]

    def __post_init__(self):
        seen_gt: set[int] = set()
        seen_pred: set[int] = set()
        for gt_id, pred_id, iou in self.pairs:
            if not iou > 0.5:
                raise ValidationError(
                    f"pair ({gt_id}, {pred_id}) has IoU {iou} <= 0.5"
                )
            if gt_id in seen_gt or pred_id in seen_pred:
                raise ValidationError("an id appears in more than one pair")
            seen_gt.add(gt_id)
            seen_pred.add(pred_id)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def iou_sum(self) -> float:
        return float(sum(iou for _, _, iou in self.pairs))


def _boxes_touch(a, b) -> bool:
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1


def _match_lists(
    gt: Sequence[Detection], pred: Sequence[Detection]
) -> MatchResult:
    pairs = []
    matched_pred: set[int] = set()
    for g in gt:
        for p in pred:
            if p.id in matched_pred or not _boxes_touch(g.bbox, p.bbox):
                continue
            iou = mask_iou(g.pixels, p.pixels)
            if iou > 0.5:
                pairs.append((g.id, p.id, iou))
                matched_pred.add(p.id)
                break  # >0.5 overlap is exclusive: no other pred can qualify
    matched_gt = {g for g, _, _ in pairs}
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_gt=tuple(g.id for g in gt if g.id not in matched_gt),
        unmatched_pred=tuple(p.id for p in pred if p.id not in matched_pred),
    )


def match_instances(gt: DetectionSet, pred: DetectionSet) -> MatchResult:
    """Match instances across two sets by mask IoU > 0.5, ignoring class."""
    if (gt.height, gt.width) != (pred.height, pred.width):
        raise ValidationError(
            f"scene dims differ: {(gt.height, gt.width)} vs "
            f"{(pred.height, pred.width)}"
        )
    return _match_lists(list(gt), list(pred))


def panoptic_quality(matches: MatchResult) -> float:
    """PQ = Σ IoU over TP / (TP + FP/2 + FN/2); 1.0 for empty vs empty."""
    denom = matches.tp + 0.5 * matches.fp + 0.5 * matches.fn
    if denom == 0:
        return 1.0
    return matches.iou_sum / denom


# ---------------------------------------------------------------------------
# dataset-level aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneStats:
    """Per-scene partial sums; aggregate these across a dataset.

    Integer counts make the aggregation order-independent, so the scene
    stats themselves can be computed in parallel and combined in canonical
    scene order afterwards.
    """

    binary_pq: float
    class_iou_sum: tuple[float, ...]
    class_tp: tuple[int, ...]
    class_fp: tuple[int, ...]
    class_fn: tuple[int, ...]
    gt_counts: tuple[int, ...]
    pred_counts: tuple[int, ...]


def count_cells(scene: LabeledScene) -> tuple[int, ...]:
    """Number of instances per class (majority pixel class per instance)."""
    counts = [0] * NUM_CLASSES
    for det in extract_detections(scene, SOURCE_TRUTH):
        counts[det.label - 1] += 1
    return tuple(counts)


def scene_stats(gt: LabeledScene, pred: LabeledScene) -> SceneStats:
    """All matching statistics for one gt/pred scene pair."""
    if (gt.height, gt.width) != (pred.height, pred.width):
        raise ValidationError(
            f"scene dims differ: {(gt.height, gt.width)} vs "
            f"{(pred.height, pred.width)}"
        )
    # The producer tag on extracted detections is bookkeeping only here;
    # matching never reads it.
    gt_dets = list(extract_detections(gt, SOURCE_TRUTH))
    pred_dets = list(extract_detections(pred, SOURCE_TRUTH))

    binary = _match_lists(gt_dets, pred_dets)

    iou_sum = [0.0] * NUM_CLASSES
    tp = [0] * NUM_CLASSES
    fp = [0] * NUM_CLASSES
    fn = [0] * NUM_CLASSES
    for c in range(1, NUM_CLASSES + 1):
        gt_c = [d for d in gt_dets if d.label == c]
        pred_c = [d for d in pred_dets if d.label == c]
        if not gt_c and not pred_c:
            continue
        m = _match_lists(gt_c, pred_c)
        iou_sum[c - 1] = m.iou_sum
        tp[c - 1] = m.tp
        fp[c - 1] = m.fp
        fn[c - 1] = m.fn

    gt_counts = [0] * NUM_CLASSES
    for d in gt_dets:
        gt_counts[d.label - 1] += 1
    pred_counts = [0] * NUM_CLASSES
    for d in pred_dets:
        pred_counts[d.label - 1] += 1

    return SceneStats(
        binary_pq=panoptic_quality(binary),
        class_iou_sum=tuple(iou_sum),
        class_tp=tuple(tp),
        class_fp=tuple(fp),
        class_fn=tuple(fn),
        gt_counts=tuple(gt_counts),
        pred_counts=tuple(pred_counts),
    )


def pq_plus_from_stats(
    stats: Sequence[SceneStats],
) -> tuple[tuple[float | None, ...], float | None]:
    """Aggregate per-class statistics over a dataset, then divide.

    Returns (pq_plus 6-vector, mPQ+). A class with no instance anywhere —
    neither ground truth nor prediction — has no defined PQ+ (None) and is
    excluded from the mean. An entirely empty dataset therefore yields
    mPQ+ = 1.0, consistent with PQ of empty vs empty.
    """
    pq_plus: list[float | None] = []
    for c in range(NUM_CLASSES):
        iou_sum = sum(s.class_iou_sum[c] for s in stats)
        tp = sum(s.class_tp[c] for s in stats)
        fp = sum(s.class_fp[c] for s in stats)
        fn = sum(s.class_fn[c] for s in stats)
        denom = tp + 0.5 * fp + 0.5 * fn
        pq_plus.append(iou_sum / denom if denom > 0 else None)
    defined = [v for v in pq_plus if v is not None]
    mpq_plus = sum(defined) / len(defined) if defined else 1.0
    return tuple(pq_plus), mpq_plus


def multiclass_pq_plus(
    dataset_gt: Sequence[LabeledScene], dataset_pred: Sequence[LabeledScene]
) -> tuple[tuple[float | None, ...], float | None]:
    """Per-class PQ+ and mPQ+ over paired scene lists."""
    if len(dataset_gt) != len(dataset_pred):
        raise ValidationError(
            f"gt has {len(dataset_gt)} scenes, pred has {len(dataset_pred)}"
        )
    stats = [scene_stats(g, p) for g, p in zip(dataset_gt, dataset_pred)]
    return pq_plus_from_stats(stats)


def multiclass_r2(
    gt_counts: Sequence[Sequence[int]], pred_counts: Sequence[Sequence[int]]
) -> tuple[tuple[float | None, ...], float | None]:
    """Coefficient of determination per class over per-scene cell counts.

    R²_c = 1 − Σ(g−p)² / Σ(g−ḡ)². When a class has constant ground-truth
    counts the total sum of squares vanishes; such a class scores 1.0 if the
    predictions are exact and is otherwise excluded from the mean (None).
    """
    if len(gt_counts) != len(pred_counts):
        raise ValidationError(
            f"gt has {len(gt_counts)} rows, pred has {len(pred_counts)}"
        )
    if len(gt_counts) == 0:
        raise ValidationError("R² needs at least one scene")
    g = np.asarray(gt_counts)
    p = np.asarray(pred_counts)
    if g.shape != p.shape or g.ndim != 2 or g.shape[1] != NUM_CLASSES:
        raise ValidationError(
            f"count tables must both be (scenes, {NUM_CLASSES}); got "
            f"{g.shape} and {p.shape}"
        )
    if not (np.issubdtype(g.dtype, np.integer) and np.issubdtype(p.dtype, np.integer)):
        raise ValidationError("cell counts must be integers")
    g = g.astype(object)  # exact big-int sums: order of scenes cannot matter
    p = p.astype(object)
    n = g.shape[0]
    r2: list[float | None] = []
    for c in range(NUM_CLASSES):
        ss_res = int(((g[:, c] - p[:, c]) ** 2).sum())
        # n * sum((x - mean)^2) == n*sum(x^2) - sum(x)^2, all in integers
        ss_tot_n = n * int((g[:, c] ** 2).sum()) - int(g[:, c].sum()) ** 2
        if ss_tot_n == 0:
            r2.append(1.0 if ss_res == 0 else None)
        else:
            r2.append(1.0 - (n * ss_res) / ss_tot_n)
    defined = [v for v in r2 if v is not None]
    mean = sum(defined) / len(defined) if defined else None
    return tuple(r2), mean


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    """Everything the evaluation emits; `None` marks undefined entries."""

    pq: float
    pq_plus: tuple[float | None, ...]
    mpq_plus: float | None
    r2: tuple[float | None, ...]
    r2_mean: float | None
    per_scene_counts: tuple[tuple[int, ...], ...]

    def as_dict(self) -> dict:
        return {
            "pq": self.pq,
            "pq_plus": list(self.pq_plus),
            "mpq_plus": self.mpq_plus,
            "r2": list(self.r2),
            "r2_mean": self.r2_mean,
            "per_scene_counts": [list(row) for row in self.per_scene_counts],
        }


def compile_report(stats: Sequence[SceneStats]) -> MetricsReport:
    """Combine per-scene statistics (in canonical scene order) into a report."""
    if not stats:
        raise ValidationError("cannot evaluate an empty dataset")
    pq = sum(s.binary_pq for s in stats) / len(stats)
    pq_plus, mpq_plus = pq_plus_from_stats(stats)
    r2, r2_mean = multiclass_r2(
        [s.gt_counts for s in stats], [s.pred_counts for s in stats]
    )
    return MetricsReport(
        pq=pq,
        pq_plus=pq_plus,
        mpq_plus=mpq_plus,
        r2=r2,
        r2_mean=r2_mean,
        per_scene_counts=tuple(s.pred_counts for s in stats),
    )


def evaluate_dataset(
    dataset_gt: Sequence[LabeledScene], dataset_pred: Sequence[LabeledScene]
) -> MetricsReport:
    """Score a paired dataset of ground-truth and predicted scenes."""
    if len(dataset_gt) != len(dataset_pred):
        raise ValidationError(
            f"gt has {len(dataset_gt)} scenes, pred has {len(dataset_pred)}"
        )
    stats = [scene_stats(g, p) for g, p in zip(dataset_gt, dataset_pred)]
    return compile_report(stats)
