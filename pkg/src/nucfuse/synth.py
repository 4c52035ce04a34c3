"""Synthetic scenes and producer stand-ins for desk-scale testing.

Real semantic/instance producers are neural networks; this module fakes
both so the fusion and scoring machinery can be exercised end to end
without any model. `generate_scene` lays down disjoint elliptical nuclei
over a noisy background; `perturb` damages a ground-truth scene in
controlled ways (mask erosion/dilation, label confusion, cell dropping).

`reference_producers` builds the canonical pair of complementary fakes:
a "semantic" producer with perfect labels but eroded masks, and an
"instance" producer with perfect masks but confused labels. Fusing the two
with default voting weights repairs most label errors while keeping exact
masks, so the ensemble scores at least as well as either producer alone —
the behavior the fusion stage exists to deliver.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .core import (
    CROSS,
    NUM_CLASSES,
    SOURCE_TRUTH,
    LabeledScene,
    ValidationError,
    extract_detections,
)
from .rng import make_rng

UNIFORM_FREQUENCIES = (1 / 6,) * NUM_CLASSES

# Flat fill colors for synthetic nuclei, indexed by class id 1..6. Chosen
# for contrast on the grey background; the io module's overlay palette is
# a separate, documented concern.
_FILL = {
    1: (230, 25, 75),
    2: (60, 180, 75),
    3: (67, 99, 216),
    4: (245, 130, 49),
    5: (240, 50, 230),
    6: (66, 212, 244),
}
_BACKGROUND_GREY = 200.0
_BACKGROUND_SIGMA = 8.0


@dataclass(frozen=True)
class SynthConfig:
    height: int = 256
    width: int = 256
    n_cells: int = 30
    radius_range: tuple[float, float] = (4.0, 12.0)
    class_frequencies: tuple[float, ...] = UNIFORM_FREQUENCIES
    seed: int = 0
    max_tries: int = 200

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"bad dims {(self.height, self.width)}")
        if self.n_cells < 0:
            raise ValidationError("n_cells must be non-negative")
        lo, hi = self.radius_range
        if not 1.0 <= lo <= hi:
            raise ValidationError(f"bad radius_range {self.radius_range}")
        freqs = tuple(float(f) for f in self.class_frequencies)
        if len(freqs) != NUM_CLASSES or any(f < 0 for f in freqs):
            raise ValidationError("class_frequencies must be 6 non-negative values")
        if abs(sum(freqs) - 1.0) > 1e-9:
            raise ValidationError(f"class_frequencies sum to {sum(freqs)!r}, not 1")
        object.__setattr__(self, "class_frequencies", freqs)
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.max_tries < 1:
            raise ValidationError("max_tries must be positive")


def _ellipse_mask(
    h: int, w: int, cy: float, cx: float, a: float, b: float, theta: float
) -> tuple[tuple[slice, slice], np.ndarray]:
    """An ellipse clipped to the scene, as (window, local boolean mask).

    The window is padded one pixel beyond the ellipse extent (still inside
    the scene) so a one-pixel dilation of the local mask stays inside it.
    Convex shapes stay connected under rectangular clipping.
    """
    r_max = max(a, b) + 1.0
    y0 = max(0, int(np.floor(cy - r_max)) - 1)
    y1 = min(h, int(np.ceil(cy + r_max)) + 2)
    x0 = max(0, int(np.floor(cx - r_max)) - 1)
    x1 = min(w, int(np.ceil(cx + r_max)) + 2)
    window = (slice(y0, y1), slice(x0, x1))
    if y0 >= y1 or x0 >= x1:
        return window, np.zeros((max(0, y1 - y0), max(0, x1 - x0)), dtype=bool)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy = yy - cy
    dx = xx - cx
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    return window, (u / a) ** 2 + (v / b) ** 2 <= 1.0


def generate_scene(cfg: SynthConfig) -> tuple[np.ndarray, LabeledScene]:
    """Place disjoint elliptical nuclei; returns (image, scene).

    Placement is rejection-sampled: a candidate ellipse is redrawn until it
    clears every already-placed cell by at least one pixel (so instances
    never touch). Raises after `cfg.max_tries` failed draws for one cell.
    Classes are drawn from `class_frequencies` before placement, so the
    class histogram never depends on how crowded the scene is.
    """
    rng = make_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    instance = np.zeros((h, w), dtype=np.int32)
    classes = np.zeros((h, w), dtype=np.uint8)
    # occupancy grown by one pixel; candidates must avoid it entirely
    blocked = np.zeros((h, w), dtype=bool)

    image = np.clip(
        np.rint(rng.normal(_BACKGROUND_GREY, _BACKGROUND_SIGMA, size=(h, w, 3))),
        0,
        255,
    ).astype(np.uint8)

    freqs = np.asarray(cfg.class_frequencies, dtype=np.float64)
    freqs = freqs / freqs.sum()
    lo, hi = cfg.radius_range
    for cell_idx in range(cfg.n_cells):
        label = int(rng.choice(NUM_CLASSES, p=freqs)) + 1
        for attempt in range(cfg.max_tries):
            cy = float(rng.uniform(0, h))
            cx = float(rng.uniform(0, w))
            a = float(rng.uniform(lo, hi))
            b = float(rng.uniform(lo, hi))
            theta = float(rng.uniform(0, np.pi))
            window, mask = _ellipse_mask(h, w, cy, cx, a, b, theta)
            if not mask.any() or (mask & blocked[window]).any():
                continue
            cell_id = cell_idx + 1
            instance[window][mask] = cell_id
            classes[window][mask] = label
            image[window][mask] = _FILL[label]
            blocked[window] |= ndimage.binary_dilation(mask, structure=CROSS)
            break
        else:
            raise ValidationError(
                f"could not place cell {cell_idx + 1}/{cfg.n_cells} after "
                f"{cfg.max_tries} attempts; scene too crowded"
            )
    return image, LabeledScene(instance, classes)


def identity_confusion() -> tuple[tuple[float, ...], ...]:
    return tuple(
        tuple(1.0 if i == j else 0.0 for j in range(NUM_CLASSES))
        for i in range(NUM_CLASSES)
    )


def shift_confusion(keep: float) -> tuple[tuple[float, ...], ...]:
    """Keep the true class with probability `keep`; put the rest on the
    cyclically next class (1→2, …, 6→1)."""
    if not 0.0 <= keep <= 1.0:
        raise ValidationError(f"keep probability {keep} outside [0, 1]")
    rows = []
    for i in range(NUM_CLASSES):
        row = [0.0] * NUM_CLASSES
        row[i] = keep
        row[(i + 1) % NUM_CLASSES] += 1.0 - keep
        rows.append(tuple(row))
    return tuple(rows)


MASK_NOISE_KINDS = ("none", "erode", "dilate")


@dataclass(frozen=True)
class PerturbConfig:
    mask_noise: str = "none"
    magnitude: int = 1
    label_confusion: tuple[tuple[float, ...], ...] = field(
        default_factory=identity_confusion
    )
    drop_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mask_noise not in MASK_NOISE_KINDS:
            raise ValidationError(
                f"mask_noise must be one of {MASK_NOISE_KINDS}, got {self.mask_noise!r}"
            )
        if self.magnitude < 0:
            raise ValidationError("magnitude must be non-negative")
        rows = tuple(tuple(float(v) for v in row) for row in self.label_confusion)
        if len(rows) != NUM_CLASSES or any(len(r) != NUM_CLASSES for r in rows):
            raise ValidationError("label_confusion must be a 6x6 matrix")
        for i, row in enumerate(rows):
            if any(v < 0 for v in row):
                raise ValidationError(f"confusion row {i + 1} has negative entries")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValidationError(
                    f"confusion row {i + 1} sums to {sum(row)!r}, not 1"
                )
        object.__setattr__(self, "label_confusion", rows)
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValidationError(f"drop_rate {self.drop_rate} outside [0, 1]")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


def perturb(scene: LabeledScene, cfg: PerturbConfig) -> LabeledScene:
    """Damage a scene cell by cell: drop, relabel, erode/dilate.

    Cells are visited in canonical order; per cell the draws are drop
    first, then the confusion-matrix label. Original instance ids are kept,
    so the identity config returns an exactly equal scene. Erosion that
    would delete a cell outright keeps the original mask instead; dilation
    grows only into pixels that were background in the input, earlier
    canonical cell winning contested pixels.
    """
    rng = make_rng(cfg.seed)
    h, w = scene.height, scene.width
    was_background = scene.instance_map == 0
    instance = np.zeros((h, w), dtype=np.int32)
    classes = np.zeros((h, w), dtype=np.uint8)

    for det in extract_detections(scene, SOURCE_TRUTH):
        dropped = rng.random() < cfg.drop_rate
        row = np.asarray(cfg.label_confusion[det.label - 1])
        label = int(rng.choice(NUM_CLASSES, p=row / row.sum())) + 1
        if dropped:
            continue

        mask = np.zeros((h, w), dtype=bool)
        mask.ravel()[det.pixels] = True
        if cfg.mask_noise == "erode" and cfg.magnitude > 0:
            eroded = ndimage.binary_erosion(
                mask, structure=CROSS, iterations=cfg.magnitude
            )
            if eroded.any():
                mask = eroded
        elif cfg.mask_noise == "dilate" and cfg.magnitude > 0:
            grown = ndimage.binary_dilation(
                mask, structure=CROSS, iterations=cfg.magnitude
            )
            mask = mask | (grown & was_background)

        free = mask & (instance == 0)
        if not free.any():
            continue
        instance[free] = det.id
        classes[free] = label
    return LabeledScene(instance, classes)


def reference_producers(
    gt: LabeledScene,
    seed: int,
    erode_magnitude: int = 1,
    label_keep: float = 0.8,
) -> tuple[LabeledScene, LabeledScene]:
    """The complementary producer pair used throughout the tests.

    Semantic stand-in: labels untouched, every mask eroded — weak geometry,
    trusted classification. Instance stand-in: masks untouched, labels
    flipped to the next class with probability 1 − `label_keep` — exact
    geometry, noisy classification. The two derive distinct streams from
    `seed`, so one seed pins the whole scenario.
    """
    sem = perturb(
        gt,
        PerturbConfig(
            mask_noise="erode",
            magnitude=erode_magnitude,
            seed=seed ^ 0x53454D,
        ),
    )
    inst = perturb(
        gt,
        PerturbConfig(
            label_confusion=shift_confusion(label_keep),
            seed=seed ^ 0x494E53,
        ),
    )
    return sem, inst
