"""Core domain types for labeled nucleus rasters and sparse detections.

A scene is a pair of equally sized rasters: an instance map whose nonzero
values identify individual nuclei, and a class map assigning every pixel one
of six nucleus categories (0 means background in both). All higher stages
(fusion, metrics, IO) exchange data through the types defined here.

Conventions used throughout the package:

* Boxes are half-open pixel rectangles ``[x0, x1) x [y0, y1)`` so that
  discrete areas are unambiguous.
* Sparse masks are stored as sorted 1-D arrays of flat raster offsets
  (``row * width + col``); disjointness and set arithmetic reduce to sorted
  array operations.
* Canonical detection order is geometric: ascending bounding-box origin
  ``(y0, x0)``, then the smallest mask offset. Instance id values are opaque
  and never drive ordering decisions on their own.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

NUM_CLASSES = 6
CLASS_NAMES = (
    "neutrophil",
    "epithelial",
    "lymphocyte",
    "plasma",
    "eosinophil",
    "connective",
)

SOURCE_SEMANTIC = "semantic"
SOURCE_INSTANCE = "instance"
SOURCE_FUSED = "fused"
SOURCE_TRUTH = "truth"
VALID_SOURCES = frozenset(
    {SOURCE_SEMANTIC, SOURCE_INSTANCE, SOURCE_FUSED, SOURCE_TRUTH}
)

# 4-connectivity structuring element shared by labeling and morphology.
CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class ValidationError(ValueError):
    """An input violates one of the documented invariants."""


class BBox(NamedTuple):
    """Half-open pixel box ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def is_valid(self) -> bool:
        return self.x0 < self.x1 and self.y0 < self.y1


def bbox_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes under half-open pixel areas.

    Symmetric, in [0, 1], and exactly 1.0 only for identical boxes.
    Disjoint boxes score 0.0.
    """
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two sparse masks (sorted flat offsets)."""
    if a.size == 0 or b.size == 0:
        raise ValidationError("mask_iou requires non-empty masks")
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


def pixel_offsets(mask: np.ndarray) -> np.ndarray:
    """Flat offsets of the true pixels of a 2-D boolean mask, ascending."""
    return np.flatnonzero(mask).astype(np.int64)


def offsets_bbox(offsets: np.ndarray, width: int) -> BBox:
    """Tight bounding box of a sparse mask given the raster width."""
    rows = offsets // width
    cols = offsets % width
    return BBox(int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)


@dataclass(frozen=True, eq=False)
class LabeledScene:
    """An instance-id raster paired with a class raster of equal size.

    Invariants (checked on construction):
      * both rasters are 2-D with identical shape;
      * instance ids are non-negative, class values lie in 0..6;
      * a pixel has instance id 0 exactly when its class is 0.

    Arrays are copied and frozen, so scenes are safe to share across threads.
    """

    instance_map: np.ndarray
    class_map: np.ndarray

    def __post_init__(self):
        inst = np.asarray(self.instance_map)
        cls = np.asarray(self.class_map)
        if inst.ndim != 2 or cls.ndim != 2:
            raise ValidationError("scene rasters must be 2-D")
        if inst.shape != cls.shape:
            raise ValidationError(
                f"instance map {inst.shape} and class map {cls.shape} differ in size"
            )
        if not np.issubdtype(inst.dtype, np.integer) or not np.issubdtype(
            cls.dtype, np.integer
        ):
            raise ValidationError("scene rasters must be integer typed")
        if inst.size and int(inst.min()) < 0:
            raise ValidationError("instance ids must be non-negative")
        if cls.size and (int(cls.min()) < 0 or int(cls.max()) > NUM_CLASSES):
            raise ValidationError(f"class values must lie in 0..{NUM_CLASSES}")
        bad = (inst == 0) != (cls == 0)
        if bad.any():
            flat = int(np.flatnonzero(bad.ravel())[0])
            r, c = divmod(flat, inst.shape[1])
            raise ValidationError(
                f"background mismatch at pixel (x={c}, y={r}): "
                f"instance id {int(inst[r, c])}, class {int(cls[r, c])}"
            )
        inst = np.ascontiguousarray(inst, dtype=np.int32)
        cls = np.ascontiguousarray(cls, dtype=np.uint8)
        inst.setflags(write=False)
        cls.setflags(write=False)
        object.__setattr__(self, "instance_map", inst)
        object.__setattr__(self, "class_map", cls)

    @property
    def height(self) -> int:
        return self.instance_map.shape[0]

    @property
    def width(self) -> int:
        return self.instance_map.shape[1]

    @classmethod
    def empty(cls, height: int, width: int) -> "LabeledScene":
        return cls(
            np.zeros((height, width), dtype=np.int32),
            np.zeros((height, width), dtype=np.uint8),
        )


@dataclass(frozen=True, eq=False)
class Detection:
    """One nucleus: a sparse pixel mask plus class label and producer tag."""

    id: int
    label: int
    source: str
    bbox: BBox
    pixels: np.ndarray  # sorted flat raster offsets, row-major

    def __post_init__(self):
        if not 1 <= self.label <= NUM_CLASSES:
            raise ValidationError(f"detection label {self.label} outside 1..{NUM_CLASSES}")
        if self.source not in VALID_SOURCES:
            raise ValidationError(f"unknown producer tag {self.source!r}")
        px = np.asarray(self.pixels, dtype=np.int64)
        if px.size == 0:
            raise ValidationError("detection mask must be non-empty")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    def canonical_key(self) -> tuple:
        return (self.bbox.y0, self.bbox.x0, int(self.pixels[0]), self.id)


@dataclass(frozen=True, eq=False)
class DetectionSet:
    """Detections of one producer for one scene, in canonical order.

    Masks are pairwise disjoint and each bounding box is the tight bound of
    its mask; both properties are verified on construction.
    """

    height: int
    width: int
    detections: tuple[Detection, ...]

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        n_px = self.height * self.width
        seen = []
        prev_key = None
        for det in self.detections:
            px = det.pixels
            if int(px[0]) < 0 or int(px[-1]) >= n_px:
                raise ValidationError(f"detection {det.id} has pixels outside the scene")
            if px.size > 1 and not (np.diff(px) > 0).all():
                raise ValidationError(f"detection {det.id} mask offsets not strictly ascending")
            if det.bbox != offsets_bbox(px, self.width):
                raise ValidationError(f"detection {det.id} bbox is not tight")
            key = det.canonical_key()
            if prev_key is not None and key < prev_key:
                raise ValidationError("detections are not in canonical order")
            prev_key = key
            seen.append(px)
        if seen:
            merged = np.concatenate(seen)
            if np.unique(merged).size != merged.size:
                raise ValidationError("detection masks overlap within one set")

    @classmethod
    def from_unordered(
        cls, height: int, width: int, detections: Iterable[Detection]
    ) -> "DetectionSet":
        ordered = sorted(detections, key=Detection.canonical_key)
        return cls(height, width, tuple(ordered))

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)


def extract_detections(scene: LabeledScene, source: str) -> DetectionSet:
    """Turn a labeled scene into one detection per distinct instance id.

    The detection label is the majority class over the instance's pixels,
    ties broken toward the smaller class id. Detections come back in
    canonical order regardless of the numeric ids in the scene.
    """
    if source not in VALID_SOURCES:
        raise ValidationError(f"unknown producer tag {source!r}")
    h, w = scene.height, scene.width
    flat_inst = scene.instance_map.ravel()
    nonzero = np.flatnonzero(flat_inst)
    if nonzero.size == 0:
        return DetectionSet(h, w, ())
    ids = flat_inst[nonzero]
    order = np.argsort(ids, kind="stable")  # stable keeps offsets ascending per id
    sorted_ids = ids[order]
    sorted_px = nonzero[order].astype(np.int64)
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    bounds = np.r_[starts, sorted_ids.size]
    flat_cls = scene.class_map.ravel()
    detections = []
    for s, e in zip(bounds[:-1], bounds[1:]):
        px = sorted_px[s:e]
        counts = np.bincount(flat_cls[px], minlength=NUM_CLASSES + 1)
        if counts[1:].sum() == 0:
            raise ValidationError(
                f"instance {int(sorted_ids[s])} has only background-class pixels"
            )
        label = int(np.argmax(counts[1:])) + 1  # first max -> smaller class wins ties
        detections.append(
            Detection(
                id=int(sorted_ids[s]),
                label=label,
                source=source,
                bbox=offsets_bbox(px, w),
                pixels=px,
            )
        )
    return DetectionSet.from_unordered(h, w, detections)


def rasterize(detections: DetectionSet) -> LabeledScene:
    """Paint a detection set back into a labeled scene.

    Masks in a DetectionSet are disjoint, so the result is exact:
    extract_detections followed by rasterize reproduces the original rasters.
    """
    inst = np.zeros(detections.height * detections.width, dtype=np.int32)
    cls = np.zeros_like(inst, dtype=np.uint8)
    for det in detections:
        inst[det.pixels] = det.id
        cls[det.pixels] = det.label
    shape = (detections.height, detections.width)
    return LabeledScene(inst.reshape(shape), cls.reshape(shape))


def relabel_components(class_map: np.ndarray) -> LabeledScene:
    """Split a class-only raster into per-component instances.

    Connected components (4-connectivity) of same-class foreground receive
    distinct instance ids 1..N, numbered by the position of each component's
    first pixel in row-major scan order. Diagonal contact does not join
    components, so touching nuclei of one class stay separate unless they
    share an edge.
    """
    cls = np.asarray(class_map)
    if cls.ndim != 2:
        raise ValidationError("class raster must be 2-D")
    if not np.issubdtype(cls.dtype, np.integer):
        raise ValidationError("class raster must be integer typed")
    if cls.size and (int(cls.min()) < 0 or int(cls.max()) > NUM_CLASSES):
        raise ValidationError(f"class values must lie in 0..{NUM_CLASSES}")
    components: list[tuple[int, np.ndarray]] = []  # (first flat offset, offsets)
    for value in range(1, NUM_CLASSES + 1):
        labeled, n = ndimage.label(cls == value, structure=CROSS)
        if n == 0:
            continue
        flat = labeled.ravel()
        nonzero = np.flatnonzero(flat)
        comp_ids = flat[nonzero]
        order = np.argsort(comp_ids, kind="stable")
        sorted_ids = comp_ids[order]
        sorted_px = nonzero[order].astype(np.int64)
        starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
        bounds = np.r_[starts, sorted_ids.size]
        for s, e in zip(bounds[:-1], bounds[1:]):
            px = sorted_px[s:e]
            components.append((int(px[0]), px))
    components.sort(key=lambda item: item[0])
    inst = np.zeros(cls.size, dtype=np.int32)
    for new_id, (_, px) in enumerate(components, start=1):
        inst[px] = new_id
    return LabeledScene(inst.reshape(cls.shape), cls.astype(np.uint8))
