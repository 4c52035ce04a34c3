"""nucfuse — fuse two nuclei-segmentation producers and score the result.

The package merges a "semantic" and an "instance" producer's label maps by
grouping overlapping detections, unioning their masks and voting on the
class, then evaluates any prediction against ground truth with panoptic
quality, dataset-aggregated per-class PQ+, mPQ+, and per-class count R².
Seeded synthetic scenes, producer perturbation stand-ins, a deterministic
augmentation pipeline and a CLI round it out.
"""

from .core import (
    CLASS_NAMES,
    NUM_CLASSES,
    SOURCE_FUSED,
    SOURCE_INSTANCE,
    SOURCE_SEMANTIC,
    SOURCE_TRUTH,
    BBox,
    Detection,
    DetectionSet,
    LabeledScene,
    ValidationError,
    bbox_iou,
    extract_detections,
    mask_iou,
    rasterize,
    relabel_components,
)
from .fusion import (
    DEFAULT_INSTANCE_WEIGHTS,
    DEFAULT_SEMANTIC_WEIGHTS,
    FusionConfig,
    FusionGroup,
    TieBreak,
    VotingWeights,
    build_overlap_groups,
    fuse,
    vote_label,
)
from .metrics import (
    MatchResult,
    MetricsReport,
    OneHotLabelMap,
    ProbabilityMap,
    count_cells,
    cross_entropy,
    evaluate_dataset,
    match_instances,
    multiclass_pq_plus,
    multiclass_r2,
    panoptic_quality,
)
from .augment import AugmentConfig, augment_pair, upscale_2x
from .synth import PerturbConfig, SynthConfig, generate_scene, perturb, reference_producers
from .sceneio import PALETTE, PackageError, read_scene, render_overlay, write_scene

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "BBox",
    "CLASS_NAMES",
    "DEFAULT_INSTANCE_WEIGHTS",
    "DEFAULT_SEMANTIC_WEIGHTS",
    "Detection",
    "DetectionSet",
    "FusionConfig",
    "FusionGroup",
    "LabeledScene",
    "MatchResult",
    "MetricsReport",
    "NUM_CLASSES",
    "OneHotLabelMap",
    "PALETTE",
    "PackageError",
    "PerturbConfig",
    "ProbabilityMap",
    "SOURCE_FUSED",
    "SOURCE_INSTANCE",
    "SOURCE_SEMANTIC",
    "SOURCE_TRUTH",
    "SynthConfig",
    "TieBreak",
    "ValidationError",
    "VotingWeights",
    "__version__",
    "augment_pair",
    "bbox_iou",
    "build_overlap_groups",
    "count_cells",
    "cross_entropy",
    "evaluate_dataset",
    "extract_detections",
    "fuse",
    "generate_scene",
    "mask_iou",
    "match_instances",
    "multiclass_pq_plus",
    "multiclass_r2",
    "panoptic_quality",
    "perturb",
    "rasterize",
    "read_scene",
    "reference_producers",
    "relabel_components",
    "render_overlay",
    "upscale_2x",
    "vote_label",
    "write_scene",
]
