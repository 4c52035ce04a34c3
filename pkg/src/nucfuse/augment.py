"""Seeded four-step augmentation for image/scene pairs.

The training-time recipe for 256x256 histology tiles, reproduced as a
deterministic pipeline:

1. upscale to twice the source size (bilinear for the image);
2. random scale from a configured range, then a random 512x512 crop,
   zero-padding wherever the window leaves the source;
3. random horizontal/vertical flips;
4. one randomly chosen photometric op — gaussian blur, median blur or
   additive gaussian noise — applied to the image only.

Label rasters move through steps 1–3 with nearest-neighbor resampling only,
so no instance id or class value is ever invented by interpolation, and step
4 never touches them. All randomness comes from an explicit counter-based
generator (see rng module); equal seeds give bit-identical outputs
regardless of thread count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from .core import LabeledScene, ValidationError
from .rng import make_rng

NOISE_GAUSSIAN_BLUR = "gaussian-blur"
NOISE_MEDIAN_BLUR = "median-blur"
NOISE_ADDITIVE_GAUSSIAN = "additive-gaussian-noise"
ALL_NOISE_OPS = (NOISE_GAUSSIAN_BLUR, NOISE_MEDIAN_BLUR, NOISE_ADDITIVE_GAUSSIAN)


def validate_image(image: np.ndarray, scene: Optional[LabeledScene] = None) -> np.ndarray:
    """Check an (H, W, 3) uint8 image, optionally against a scene's dims."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValidationError(
            f"image must be (H, W, 3) uint8, got shape {image.shape} "
            f"dtype {image.dtype}"
        )
    if scene is not None and image.shape[:2] != (scene.height, scene.width):
        raise ValidationError(
            f"image dims {image.shape[:2]} do not match scene "
            f"{(scene.height, scene.width)}"
        )
    return image


@dataclass(frozen=True)
class AugmentConfig:
    target_size: int = 512
    scale_range: tuple[float, float] = (0.8, 1.2)
    flip_horizontal: bool = True
    flip_vertical: bool = True
    noise_ops: tuple[str, ...] = ALL_NOISE_OPS
    blur_kernels: tuple[int, ...] = (3, 5)
    noise_sigma_range: tuple[float, float] = (0.0, 0.05 * 255.0)
    seed: int = 0

    def __post_init__(self):
        if self.target_size <= 0:
            raise ValidationError(f"target_size must be positive, got {self.target_size}")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise ValidationError(f"bad scale_range {self.scale_range}")
        unknown = set(self.noise_ops) - set(ALL_NOISE_OPS)
        if unknown:
            raise ValidationError(f"unknown noise ops: {sorted(unknown)}")
        if any(k < 1 or k % 2 == 0 for k in self.blur_kernels):
            raise ValidationError("blur kernels must be odd and positive")
        slo, shi = self.noise_sigma_range
        if not (0.0 <= slo <= shi):
            raise ValidationError(f"bad noise_sigma_range {self.noise_sigma_range}")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


def _nearest_rows_cols(in_h: int, in_w: int, out_h: int, out_w: int):
    # Pixel-center mapping: output index i samples input floor((i+0.5)*in/out).
    # Exact identity at equal size; exact 2x2 block replication at 2x.
    rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64), in_w - 1)
    return rows, cols


def _resize_scene(scene: LabeledScene, out_h: int, out_w: int) -> LabeledScene:
    if (out_h, out_w) == (scene.height, scene.width):
        return scene
    rows, cols = _nearest_rows_cols(scene.height, scene.width, out_h, out_w)
    grid = np.ix_(rows, cols)
    return LabeledScene(scene.instance_map[grid], scene.class_map[grid])


def _resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if (out_h, out_w) == image.shape[:2]:
        return image.copy()
    return cv2.resize(image, (out_w, out_h), interpolation=cv2.INTER_LINEAR)


def upscale_2x(
    image: Optional[np.ndarray], scene: LabeledScene
) -> tuple[Optional[np.ndarray], LabeledScene]:
    """Double both dimensions: bilinear image, replicated label pixels.

    Every label pixel becomes an exact 2x2 block, so instance pixel counts
    quadruple and no new label values appear.
    """
    out = LabeledScene(
        np.repeat(np.repeat(scene.instance_map, 2, axis=0), 2, axis=1),
        np.repeat(np.repeat(scene.class_map, 2, axis=0), 2, axis=1),
    )
    if image is None:
        return None, out
    image = validate_image(image, scene)
    return _resize_image(image, 2 * scene.height, 2 * scene.width), out


def random_scale_crop(
    image: Optional[np.ndarray],
    scene: LabeledScene,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[Optional[np.ndarray], LabeledScene]:
    """Random uniform rescale followed by a random fixed-size crop.

    The crop offset is drawn uniformly over all positions that keep the
    window in contact with the source, so a source smaller than the target
    floats inside a zero-padded canvas (black pixels, background labels).
    A source exactly at target size with scale 1.0 passes through unchanged.
    """
    if image is not None:
        image = validate_image(image, scene)
    scale = float(rng.uniform(cfg.scale_range[0], cfg.scale_range[1]))
    out_h = max(1, int(np.floor(scene.height * scale + 0.5)))
    out_w = max(1, int(np.floor(scene.width * scale + 0.5)))
    scene = _resize_scene(scene, out_h, out_w)
    if image is not None:
        image = _resize_image(image, out_h, out_w)

    t = cfg.target_size
    # Offset range [min(0, S-t), max(0, S-t)]: every position where window
    # and source still overlap on that axis, uniformly.
    y_lo, y_hi = min(0, out_h - t), max(0, out_h - t)
    x_lo, x_hi = min(0, out_w - t), max(0, out_w - t)
    y0 = int(rng.integers(y_lo, y_hi + 1))
    x0 = int(rng.integers(x_lo, x_hi + 1))

    sy0, sy1 = max(0, y0), min(out_h, y0 + t)
    sx0, sx1 = max(0, x0), min(out_w, x0 + t)
    dy0, dx0 = sy0 - y0, sx0 - x0

    inst = np.zeros((t, t), dtype=scene.instance_map.dtype)
    cls = np.zeros((t, t), dtype=scene.class_map.dtype)
    inst[dy0 : dy0 + sy1 - sy0, dx0 : dx0 + sx1 - sx0] = scene.instance_map[sy0:sy1, sx0:sx1]
    cls[dy0 : dy0 + sy1 - sy0, dx0 : dx0 + sx1 - sx0] = scene.class_map[sy0:sy1, sx0:sx1]
    out_scene = LabeledScene(inst, cls)

    if image is None:
        return None, out_scene
    canvas = np.zeros((t, t, 3), dtype=np.uint8)
    canvas[dy0 : dy0 + sy1 - sy0, dx0 : dx0 + sx1 - sx0] = image[sy0:sy1, sx0:sx1]
    return canvas, out_scene


def apply_flip(
    image: Optional[np.ndarray],
    scene: LabeledScene,
    horizontal: bool,
    vertical: bool,
) -> tuple[Optional[np.ndarray], LabeledScene]:
    """Deterministic flip core; applying the same flags twice is identity."""
    axes = []
    if vertical:
        axes.append(0)
    if horizontal:
        axes.append(1)
    if not axes:
        return image, scene
    out_scene = LabeledScene(
        np.flip(scene.instance_map, axis=axes), np.flip(scene.class_map, axis=axes)
    )
    if image is None:
        return None, out_scene
    return np.flip(image, axis=axes).copy(), out_scene


def random_flip(
    image: Optional[np.ndarray],
    scene: LabeledScene,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[Optional[np.ndarray], LabeledScene]:
    """Draw one flip decision per enabled axis (horizontal first)."""
    if image is not None:
        image = validate_image(image, scene)
    horizontal = cfg.flip_horizontal and bool(rng.integers(0, 2))
    vertical = cfg.flip_vertical and bool(rng.integers(0, 2))
    return apply_flip(image, scene, horizontal, vertical)


def random_noise(
    image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Apply one uniformly chosen photometric op to the image only.

    With no ops enabled, returns the image unchanged (a copy). The additive
    branch draws sigma from the configured range; sigma 0 is the identity.
    """
    image = validate_image(image)
    if not cfg.noise_ops:
        return image.copy()
    op = cfg.noise_ops[int(rng.integers(0, len(cfg.noise_ops)))]
    if op == NOISE_ADDITIVE_GAUSSIAN:
        sigma = float(rng.uniform(cfg.noise_sigma_range[0], cfg.noise_sigma_range[1]))
        noisy = image.astype(np.float64) + rng.normal(0.0, sigma, size=image.shape)
        return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    kernel = int(cfg.blur_kernels[int(rng.integers(0, len(cfg.blur_kernels)))])
    if op == NOISE_GAUSSIAN_BLUR:
        return cv2.GaussianBlur(image, (kernel, kernel), 0)
    assert op == NOISE_MEDIAN_BLUR
    return cv2.medianBlur(image, kernel)


def augment_pair(
    image: Optional[np.ndarray],
    scene: LabeledScene,
    cfg: AugmentConfig,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Optional[np.ndarray], LabeledScene]:
    """Run the full four-step pipeline on one image/scene pair.

    Output rasters are always exactly `cfg.target_size` square. Without an
    image, the geometric steps run on the scene alone and the photometric
    step is skipped (its random draws are then never consumed, which is
    fine: determinism is per-input, and label output never depends on the
    photometric draws anyway).
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    if image is not None:
        image = validate_image(image, scene)
    image, scene = upscale_2x(image, scene)
    image, scene = random_scale_crop(image, scene, cfg, rng)
    image, scene = random_flip(image, scene, cfg, rng)
    if image is not None:
        image = random_noise(image, cfg, rng)
    return image, scene
