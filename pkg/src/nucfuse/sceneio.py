"""Bit-exact persistence for scenes, detections, reports and counts.

A scene on disk is a directory (a "scene package"):

    <name>/
        image.png      optional 8-bit RGB source image
        instance.png   16-bit grayscale, pixel value = instance id
        class.png      8-bit grayscale, pixel value = class id (0..6)
        meta.json      {"format": "scene/1", "height", "width", "producer"}

The 16-bit raster caps instance ids at 65535 — orders of magnitude above
the nucleus count of any realistic tile; the cap is enforced on write.
PNG encoding goes through Pillow with fixed settings and JSON is dumped
with sorted keys, so writing identical data yields identical bytes.

Also here: the detections JSON interchange format, the metrics report JSON
(schema below), the per-scene counts CSV, and the class-colored overlay
renderer.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .core import (
    NUM_CLASSES,
    SOURCE_TRUTH,
    VALID_SOURCES,
    BBox,
    Detection,
    DetectionSet,
    LabeledScene,
    ValidationError,
)
from .metrics import MetricsReport

SCENE_FORMAT = "scene/1"
DETECTIONS_FORMAT = "detections/1"
MAX_INSTANCE_ID = 65535

# Overlay palette, class id -> RGB. Documented hex values:
# 1 neutrophil  #E6194B   2 epithelial #3CB44B   3 lymphocyte #4363D8
# 4 plasma      #F58231   5 eosinophil #F032E6   6 connective #42D4F4
PALETTE = {
    1: (230, 25, 75),
    2: (60, 180, 75),
    3: (67, 99, 216),
    4: (245, 130, 49),
    5: (240, 50, 230),
    6: (66, 212, 244),
}
OVERLAY_ALPHA = 0.4


class PackageError(ValidationError):
    """A scene package or serialized artifact is malformed."""


# ---------------------------------------------------------------------------
# scene packages
# ---------------------------------------------------------------------------

def write_scene(
    scene: LabeledScene,
    path: str | Path,
    image: Optional[np.ndarray] = None,
    producer: str = SOURCE_TRUTH,
) -> Path:
    """Write a scene package directory; returns its path."""
    if producer not in VALID_SOURCES:
        raise PackageError(f"unknown producer tag {producer!r}")
    top = int(scene.instance_map.max()) if scene.instance_map.size else 0
    if top > MAX_INSTANCE_ID:
        raise PackageError(
            f"instance id {top} exceeds the 16-bit raster limit {MAX_INSTANCE_ID}"
        )
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    Image.fromarray(scene.instance_map.astype(np.uint16)).save(path / "instance.png")
    Image.fromarray(scene.class_map, mode="L").save(path / "class.png")
    if image is not None:
        image = np.asarray(image)
        if image.shape != (scene.height, scene.width, 3) or image.dtype != np.uint8:
            raise PackageError(
                f"image must be ({scene.height}, {scene.width}, 3) uint8, got "
                f"shape {image.shape} dtype {image.dtype}"
            )
        Image.fromarray(image, mode="RGB").save(path / "image.png")
    meta = {
        "format": SCENE_FORMAT,
        "height": scene.height,
        "width": scene.width,
        "producer": producer,
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path


def _load_png(path: Path, expect_dtype: type) -> np.ndarray:
    if not path.is_file():
        raise PackageError(f"missing file: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype != expect_dtype:
        raise PackageError(
            f"{path} decodes to dtype {arr.dtype}, expected {np.dtype(expect_dtype)}"
        )
    return arr


def read_scene(path: str | Path) -> tuple[Optional[np.ndarray], LabeledScene, str]:
    """Load a scene package; returns (image or None, scene, producer tag)."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise PackageError(f"missing file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise PackageError(f"{meta_path} is not valid JSON: {exc}") from exc
    if meta.get("format") != SCENE_FORMAT:
        raise PackageError(
            f"{meta_path}: unsupported format {meta.get('format')!r}, "
            f"expected {SCENE_FORMAT!r}"
        )
    producer = meta.get("producer", SOURCE_TRUTH)
    if producer not in VALID_SOURCES:
        raise PackageError(f"{meta_path}: unknown producer tag {producer!r}")

    instance = _load_png(path / "instance.png", np.uint16)
    classes = _load_png(path / "class.png", np.uint8)
    if instance.ndim != 2 or classes.ndim != 2:
        raise PackageError(f"{path}: rasters must be single-channel")
    if instance.shape != classes.shape:
        raise PackageError(
            f"dimension mismatch: {path / 'instance.png'} is {instance.shape} but "
            f"{path / 'class.png'} is {classes.shape}"
        )
    expected = (int(meta.get("height", -1)), int(meta.get("width", -1)))
    if instance.shape != expected:
        raise PackageError(
            f"{meta_path} declares dims {expected} but {path / 'instance.png'} "
            f"is {instance.shape}"
        )
    scene = LabeledScene(instance.astype(np.int32), classes)

    image = None
    image_path = path / "image.png"
    if image_path.is_file():
        with Image.open(image_path) as img:
            if img.mode != "RGB":
                raise PackageError(f"{image_path} must be 8-bit RGB, got {img.mode}")
            image = np.asarray(img)
        if image.shape[:2] != instance.shape:
            raise PackageError(
                f"dimension mismatch: {image_path} is {image.shape[:2]} but "
                f"{path / 'instance.png'} is {instance.shape}"
            )
    return image, scene, producer


def is_scene_package(path: Path) -> bool:
    return (path / "meta.json").is_file() and (path / "instance.png").is_file()


def list_scene_packages(root: str | Path) -> list[Path]:
    """Immediate subdirectories of `root` that look like scene packages,
    sorted by name (the canonical dataset order)."""
    root = Path(root)
    if not root.is_dir():
        raise PackageError(f"not a directory: {root}")
    return sorted(
        (p for p in root.iterdir() if p.is_dir() and is_scene_package(p)),
        key=lambda p: p.name,
    )


# ---------------------------------------------------------------------------
# detections JSON
# ---------------------------------------------------------------------------

def detections_to_dict(dets: DetectionSet, source: str) -> dict:
    return {
        "format": DETECTIONS_FORMAT,
        "height": dets.height,
        "width": dets.width,
        "source": source,
        "detections": [
            {
                "id": d.id,
                "label": d.label,
                "bbox": list(d.bbox),
                "pixels": d.pixels.tolist(),
            }
            for d in dets
        ],
    }


def write_detections(dets: DetectionSet, source: str, path: str | Path) -> None:
    payload = json.dumps(detections_to_dict(dets, source), sort_keys=True)
    Path(path).write_text(payload + "\n")


def read_detections(path: str | Path) -> tuple[DetectionSet, str]:
    path = Path(path)
    if not path.is_file():
        raise PackageError(f"missing file: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise PackageError(f"{path} is not valid JSON: {exc}") from exc
    if data.get("format") != DETECTIONS_FORMAT:
        raise PackageError(f"{path}: unsupported detections format")
    source = data["source"]
    dets = [
        Detection(
            id=rec["id"],
            label=rec["label"],
            source=source,
            bbox=BBox(*rec["bbox"]),
            pixels=np.asarray(rec["pixels"], dtype=np.int64),
        )
        for rec in data["detections"]
    ]
    return (
        DetectionSet.from_unordered(data["height"], data["width"], dets),
        source,
    )


# ---------------------------------------------------------------------------
# metrics report JSON and counts CSV
# ---------------------------------------------------------------------------

def write_report(report: MetricsReport, path: str | Path) -> None:
    """Serialize a report. Schema: {pq, pq_plus: [6, null where undefined],
    mpq_plus, r2: [6, null where undefined], r2_mean, per_scene_counts: [[6]]}.
    """
    Path(path).write_text(
        json.dumps(report.as_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"
    )


def read_report(path: str | Path) -> MetricsReport:
    path = Path(path)
    if not path.is_file():
        raise PackageError(f"missing file: {path}")
    data = json.loads(path.read_text())
    try:
        return MetricsReport(
            pq=data["pq"],
            pq_plus=tuple(data["pq_plus"]),
            mpq_plus=data["mpq_plus"],
            r2=tuple(data["r2"]),
            r2_mean=data["r2_mean"],
            per_scene_counts=tuple(tuple(row) for row in data["per_scene_counts"]),
        )
    except KeyError as exc:
        raise PackageError(f"{path}: report is missing key {exc}") from exc


def write_counts_csv(
    names: Sequence[str], counts: Sequence[Sequence[int]], path: str | Path
) -> None:
    """Per-scene counts table: header scene_id,c1..c6, one row per scene."""
    if len(names) != len(counts):
        raise PackageError(
            f"{len(names)} scene names but {len(counts)} count rows"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scene_id"] + [f"c{i}" for i in range(1, NUM_CLASSES + 1)])
        for name, row in zip(names, counts):
            if len(row) != NUM_CLASSES:
                raise PackageError(f"counts row for {name!r} has {len(row)} entries")
            writer.writerow([name] + [int(v) for v in row])


def read_counts_csv(path: str | Path) -> tuple[list[str], list[tuple[int, ...]]]:
    path = Path(path)
    if not path.is_file():
        raise PackageError(f"missing file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = ["scene_id"] + [f"c{i}" for i in range(1, NUM_CLASSES + 1)]
    if not rows or rows[0] != header:
        raise PackageError(f"{path}: bad counts header {rows[0] if rows else None!r}")
    names = [r[0] for r in rows[1:]]
    counts = [tuple(int(v) for v in r[1:]) for r in rows[1:]]
    return names, counts


# ---------------------------------------------------------------------------
# overlay rendering
# ---------------------------------------------------------------------------

def render_overlay(image: np.ndarray, scene: LabeledScene) -> np.ndarray:
    """Tint instance pixels with their class color and trace boundaries.

    Fills at fixed alpha; boundary pixels (any 4-neighbor belonging to a
    different instance, or the raster edge) get the full-strength color so
    adjacent same-class instances stay visually separate. An empty scene
    returns the image unchanged.
    """
    image = np.asarray(image)
    if image.shape != (scene.height, scene.width, 3) or image.dtype != np.uint8:
        raise ValidationError(
            f"image must be ({scene.height}, {scene.width}, 3) uint8, got "
            f"shape {image.shape} dtype {image.dtype}"
        )
    inst = scene.instance_map
    if not inst.any():
        return image.copy()

    color = np.zeros((scene.height, scene.width, 3), dtype=np.float64)
    for class_id, rgb in PALETTE.items():
        color[scene.class_map == class_id] = rgb

    fg = inst != 0
    padded = np.pad(inst, 1, constant_values=-1)
    boundary = fg & (
        (padded[:-2, 1:-1] != inst)
        | (padded[2:, 1:-1] != inst)
        | (padded[1:-1, :-2] != inst)
        | (padded[1:-1, 2:] != inst)
    )

    out = image.astype(np.float64)
    blend = fg & ~boundary
    out[blend] = (1.0 - OVERLAY_ALPHA) * out[blend] + OVERLAY_ALPHA * color[blend]
    out[boundary] = color[boundary]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
