"""Overlap-merging ensemble of two producers' detection sets.

Classic NMS keeps the single best of several overlapping detections. The
variant implemented here instead keeps *all* the information: detections from
the semantic and the instance producer whose bounding boxes overlap above an
IoU threshold are grouped, their masks are unioned into one output nucleus,
and the output class label is decided by weighted voting. The default weights
give the semantic producer the say on neutrophil, plasma and eosinophil
(weight 2 vs 1.5) and the instance producer the say on epithelial, lymphocyte
and connective tissue (1.5 vs 1), and can never tie in a two-member group.

Detections matched by nobody pass through unchanged (configurable per
producer). All steps are deterministic: groups, votes and output instance
numbering depend only on geometry, never on input ordering or id values.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    NUM_CLASSES,
    SOURCE_INSTANCE,
    SOURCE_SEMANTIC,
    BBox,
    Detection,
    DetectionSet,
    LabeledScene,
    ValidationError,
    bbox_iou,
    offsets_bbox,
)

DEFAULT_SEMANTIC_WEIGHTS = (2.0, 1.0, 1.0, 2.0, 2.0, 1.0)
DEFAULT_INSTANCE_WEIGHTS = (1.5, 1.5, 1.5, 1.5, 1.5, 1.5)


class TieBreak(Enum):
    """Vote tie policy: prefer a label voted by a semantic member, then the
    lower class id. Ties cannot occur with the default weights in two-member
    groups; larger transitive groups can produce them."""

    SEMANTIC_THEN_LOWER_CLASS = "prefer-semantic-then-lower-class"


@dataclass(frozen=True)
class VotingWeights:
    """Per-class vote weights for the two producers (index 0 = class 1)."""

    semantic: tuple[float, ...] = DEFAULT_SEMANTIC_WEIGHTS
    instance: tuple[float, ...] = DEFAULT_INSTANCE_WEIGHTS

    def __post_init__(self):
        for name, vec in (("semantic", self.semantic), ("instance", self.instance)):
            vec = tuple(float(v) for v in vec)
            if len(vec) != NUM_CLASSES:
                raise ValidationError(f"{name} weights must have {NUM_CLASSES} entries")
            if any(v <= 0 for v in vec):
                raise ValidationError(f"{name} weights must be positive")
            object.__setattr__(self, name, vec)

    def weight(self, source: str, label: int) -> float:
        if source == SOURCE_SEMANTIC:
            return self.semantic[label - 1]
        if source == SOURCE_INSTANCE:
            return self.instance[label - 1]
        raise ValidationError(f"no vote weight for producer tag {source!r}")


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.5
    keep_unmatched_semantic: bool = True
    keep_unmatched_instance: bool = True
    tie_break: TieBreak = TieBreak.SEMANTIC_THEN_LOWER_CLASS

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValidationError(
                f"iou_threshold must be in (0, 1], got {self.iou_threshold}"
            )

    def keeps(self, source: str) -> bool:
        if source == SOURCE_SEMANTIC:
            return self.keep_unmatched_semantic
        if source == SOURCE_INSTANCE:
            return self.keep_unmatched_instance
        raise ValidationError(f"no unmatched policy for producer tag {source!r}")


@dataclass(frozen=True, eq=False)
class FusionGroup:
    """Detections that identify one nucleus, with their merged geometry.

    `scores[c - 1]` is the summed vote weight for class c; `winner` maximizes
    the scores under the tie policy. `merged_pixels` is the union of all
    member masks and `merged_bbox` its tight bound. Members list semantic
    detections first, then instance detections, each block in canonical order.
    """

    members: tuple[Detection, ...]
    merged_pixels: np.ndarray
    merged_bbox: BBox
    scores: tuple[float, ...]
    winner: int


def vote_label(
    members: Sequence[tuple[int, str]],
    weights: VotingWeights,
    tie_break: TieBreak = TieBreak.SEMANTIC_THEN_LOWER_CLASS,
) -> int:
    """Weighted class vote over (label, producer tag) pairs.

    Each member adds its producer's weight for its own label; the label with
    the highest total wins. Multiplying both weight vectors by one positive
    scalar never changes the winner.
    """
    if not members:
        raise ValidationError("vote_label needs at least one member")
    scores = [0.0] * NUM_CLASSES
    semantic_labels = set()
    for label, source in members:
        if not 1 <= label <= NUM_CLASSES:
            raise ValidationError(f"vote label {label} outside 1..{NUM_CLASSES}")
        scores[label - 1] += weights.weight(source, label)
        if source == SOURCE_SEMANTIC:
            semantic_labels.add(label)
    best = max(scores)
    tied = [c for c in range(1, NUM_CLASSES + 1) if scores[c - 1] == best]
    if len(tied) == 1:
        return tied[0]
    assert tie_break is TieBreak.SEMANTIC_THEN_LOWER_CLASS
    semantic_tied = [c for c in tied if c in semantic_labels]
    return min(semantic_tied) if semantic_tied else min(tied)


def _entry_key(bbox: BBox, pixels: np.ndarray) -> tuple:
    # Total order over sparse masks: box origin, first pixel, then the full
    # offset sequence (big-endian bytes compare like the numeric sequence).
    return (bbox.y0, bbox.x0, int(pixels[0]), pixels.astype(">i8").tobytes())


def build_overlap_groups(
    sem: DetectionSet,
    inst: DetectionSet,
    cfg: FusionConfig | None = None,
    weights: VotingWeights | None = None,
) -> tuple[list[FusionGroup], list[Detection]]:
    """Group cross-producer detections whose boxes overlap enough.

    An edge joins a semantic and an instance detection when their bounding
    boxes reach `cfg.iou_threshold` IoU; groups are the connected components
    of that bipartite graph (always two or more members). Detections touching
    no edge are returned separately as unmatched, in canonical order with
    semantic before instance on exact key ties. Groups come back ordered by
    their merged geometry.
    """
    cfg = cfg or FusionConfig()
    weights = weights or VotingWeights()
    if (sem.height, sem.width) != (inst.height, inst.width):
        raise ValidationError(
            f"producer scenes differ in size: {(sem.height, sem.width)} vs "
            f"{(inst.height, inst.width)}"
        )
    sem_dets = list(sem)
    inst_dets = list(inst)
    n_sem = len(sem_dets)
    parent = list(range(n_sem + len(inst_dets)))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    matched = [False] * len(parent)
    for i, s in enumerate(sem_dets):
        for j, t in enumerate(inst_dets):
            if bbox_iou(s.bbox, t.bbox) >= cfg.iou_threshold:
                matched[i] = matched[n_sem + j] = True
                ra, rb = find(i), find(n_sem + j)
                if ra != rb:
                    parent[rb] = ra

    clusters: dict[int, list[Detection]] = {}
    unmatched: list[Detection] = []
    for idx, det in enumerate(sem_dets + inst_dets):
        if matched[idx]:
            clusters.setdefault(find(idx), []).append(det)
        else:
            unmatched.append(det)

    built = []
    for members in clusters.values():
        members.sort(key=lambda d: (d.source != SOURCE_SEMANTIC,) + d.canonical_key())
        merged = np.unique(np.concatenate([d.pixels for d in members]))
        bbox = offsets_bbox(merged, sem.width)
        scores = [0.0] * NUM_CLASSES
        for d in members:
            scores[d.label - 1] += weights.weight(d.source, d.label)
        winner = vote_label(
            [(d.label, d.source) for d in members], weights, cfg.tie_break
        )
        built.append(
            FusionGroup(
                members=tuple(members),
                merged_pixels=merged,
                merged_bbox=bbox,
                scores=tuple(scores),
                winner=winner,
            )
        )
    built.sort(key=lambda g: _entry_key(g.merged_bbox, g.merged_pixels))
    unmatched.sort(key=lambda d: d.canonical_key() + (d.source != SOURCE_SEMANTIC,))
    return built, unmatched


def fuse(
    sem: DetectionSet,
    inst: DetectionSet,
    weights: VotingWeights | None = None,
    cfg: FusionConfig | None = None,
) -> LabeledScene:
    """Merge two producers' detections into one labeled scene.

    Every overlap group becomes a single output nucleus whose mask is the
    union of the member masks and whose class is the vote winner; unmatched
    detections pass through verbatim where the config allows their producer.
    Output instances are numbered 1..N in canonical order. Where two output
    masks claim one pixel the canonically earlier instance wins; an instance
    that loses every pixel this way is dropped before numbering.
    """
    weights = weights or VotingWeights()
    cfg = cfg or FusionConfig()
    groups, unmatched = build_overlap_groups(sem, inst, cfg, weights)

    entries: list[tuple[np.ndarray, BBox, int]] = []
    for g in groups:
        entries.append((g.merged_pixels, g.merged_bbox, g.winner))
    for det in unmatched:
        if cfg.keeps(det.source):
            entries.append((det.pixels, det.bbox, det.label))
    entries.sort(key=lambda e: _entry_key(e[1], e[0]))

    inst_flat = np.zeros(sem.height * sem.width, dtype=np.int32)
    cls_flat = np.zeros(inst_flat.shape, dtype=np.uint8)
    next_id = 0
    for pixels, _, label in entries:
        free = pixels[inst_flat[pixels] == 0]
        if free.size == 0:
            continue  # fully occluded by canonically earlier instances
        next_id += 1
        inst_flat[free] = next_id
        cls_flat[free] = label
    shape = (sem.height, sem.width)
    return LabeledScene(inst_flat.reshape(shape), cls_flat.reshape(shape))
