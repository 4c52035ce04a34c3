"""Command-line pipeline: extract | fuse | eval | counts | augment | synth | render.

Subcommands compose over the scene-package format, so a full run looks like

    nucfuse synth   --out gt --scenes 8 --cells 40 --seed 7
    nucfuse fuse    --semantic runs/sem/s0 --instance runs/inst/s0 --out fused/s0
    nucfuse eval    --gt gt --pred fused --out out/report.json

`eval` writes the JSON report plus a per-scene counts CSV and two PNG
figures alongside it. Exit codes: 0 success, 2 invalid input or validation
failure, 1 internal error. Every option can also be supplied through
`--config file.json` (flat keys named like the long options with
underscores); explicit flags win over config values, and unknown config
keys are rejected. All outputs are byte-deterministic for fixed seeds,
whatever `--workers` says.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from PIL import Image

from . import augment as aug
from . import synth as syn
from .core import (
    SOURCE_FUSED,
    SOURCE_INSTANCE,
    SOURCE_SEMANTIC,
    VALID_SOURCES,
    ValidationError,
    extract_detections,
)
from .figures import save_report_figures
from .fusion import FusionConfig, VotingWeights, fuse
from .metrics import compile_report, count_cells, scene_stats
from .sceneio import (
    PackageError,
    list_scene_packages,
    read_scene,
    render_overlay,
    write_counts_csv,
    write_detections,
    write_report,
    write_scene,
)

REQUIRED = object()  # sentinel default: option must come from flags or config

# dest -> (flag kwargs); defaults live here, not in argparse, so that the
# config file can fill anything the command line left out.
_COMMON = {
    "config": dict(flag="--config", type=str, default=None, help="JSON file with option defaults"),
    "json_errors": dict(flag="--json-errors", action="store_true", default=False, help="emit errors as JSON lines on stderr"),
}

_SPECS: dict[str, dict[str, dict]] = {
    "extract": {
        "scene": dict(flag="--scene", type=str, default=REQUIRED, help="scene package directory"),
        "source": dict(flag="--source", type=str, default=REQUIRED, choices=sorted(VALID_SOURCES), help="producer tag to stamp on the detections"),
        "out": dict(flag="--out", type=str, default=REQUIRED, help="output detections JSON path"),
    },
    "fuse": {
        "semantic": dict(flag="--semantic", type=str, default=REQUIRED, help="semantic producer scene package"),
        "instance": dict(flag="--instance", type=str, default=REQUIRED, help="instance producer scene package"),
        "out": dict(flag="--out", type=str, default=REQUIRED, help="output scene package"),
        "iou_threshold": dict(flag="--iou-threshold", type=float, default=0.5, help="bounding-box IoU needed to group detections"),
        "weights": dict(flag="--weights", type=str, default=None, help="JSON file {semantic: [6], instance: [6]} of vote weights"),
        "drop_unmatched_semantic": dict(flag="--drop-unmatched-semantic", action="store_true", default=False, help="discard semantic detections nobody matched"),
        "drop_unmatched_instance": dict(flag="--drop-unmatched-instance", action="store_true", default=False, help="discard instance detections nobody matched"),
    },
    "eval": {
        "gt": dict(flag="--gt", type=str, default=REQUIRED, help="directory of ground-truth scene packages"),
        "pred": dict(flag="--pred", type=str, default=REQUIRED, help="directory of predicted scene packages"),
        "out": dict(flag="--out", type=str, default=REQUIRED, help="output report JSON path (counts CSV and figures land next to it)"),
        "workers": dict(flag="--workers", type=int, default=1, help="worker threads for per-scene statistics"),
    },
    "counts": {
        "scenes": dict(flag="--scenes", type=str, default=REQUIRED, help="directory of scene packages"),
        "out": dict(flag="--out", type=str, default=REQUIRED, help="output counts CSV path"),
    },
    "augment": {
        "in_dir": dict(flag="--in", type=str, default=REQUIRED, help="directory of input scene packages"),
        "out": dict(flag="--out", type=str, default=REQUIRED, help="directory for augmented packages"),
        "seed": dict(flag="--seed", type=int, default=0, help="base seed; package i uses seed XOR i"),
        "target_size": dict(flag="--target-size", type=int, default=512, help="output raster size"),
        "scale_min": dict(flag="--scale-min", type=float, default=0.8, help="lower bound of the random rescale"),
        "scale_max": dict(flag="--scale-max", type=float, default=1.2, help="upper bound of the random rescale"),
        "no_flip_horizontal": dict(flag="--no-flip-horizontal", action="store_true", default=False, help="disable horizontal flips"),
        "no_flip_vertical": dict(flag="--no-flip-vertical", action="store_true", default=False, help="disable vertical flips"),
        "noise_ops": dict(flag="--noise-ops", type=str, default=",".join(aug.ALL_NOISE_OPS), help="comma-separated photometric ops; empty string disables"),
        "workers": dict(flag="--workers", type=int, default=1, help="worker threads"),
    },
    "synth": {
        "out": dict(flag="--out", type=str, default=REQUIRED, help="directory for generated packages"),
        "scenes": dict(flag="--scenes", type=int, default=1, help="number of scenes"),
        "cells": dict(flag="--cells", type=int, default=30, help="nuclei per scene"),
        "height": dict(flag="--height", type=int, default=256, help="scene height"),
        "width": dict(flag="--width", type=int, default=256, help="scene width"),
        "radius_min": dict(flag="--radius-min", type=float, default=4.0, help="smallest ellipse semi-axis"),
        "radius_max": dict(flag="--radius-max", type=float, default=12.0, help="largest ellipse semi-axis"),
        "seed": dict(flag="--seed", type=int, default=0, help="base seed; scene i uses seed XOR i"),
    },
    "render": {
        "scene": dict(flag="--scene", type=str, default=REQUIRED, help="scene package with an image.png"),
        "out": dict(flag="--out", type=str, default=REQUIRED, help="output overlay PNG path"),
    },
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nucfuse",
        description="Fuse and score nuclei instance/class maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, spec in _SPECS.items():
        p = sub.add_parser(name)
        for dest, opt in {**spec, **_COMMON}.items():
            kwargs = dict(help=opt.get("help"))
            if "choices" in opt:
                kwargs["choices"] = opt["choices"]
            if opt.get("action") == "store_true":
                kwargs["action"] = "store_true"
            else:
                kwargs["type"] = opt["type"]
            # SUPPRESS means "not given"; real defaults are merged later so
            # config-file values slot underneath explicit flags.
            p.add_argument(opt["flag"], dest=dest, default=argparse.SUPPRESS, **kwargs)
    return parser


def _effective_options(command: str, passed: dict) -> dict:
    spec = _SPECS[command]
    values = {dest: opt["default"] for dest, opt in spec.items()}
    values["json_errors"] = passed.get("json_errors", False)

    config_path = passed.get("config")
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError(f"config {path} must hold a JSON object")
        unknown = sorted(set(loaded) - set(spec))
        if unknown:
            raise ValidationError(
                f"config {path} has unknown keys for '{command}': {unknown}"
            )
        values.update(loaded)

    for dest, value in passed.items():
        if dest not in ("config", "json_errors", "command"):
            values[dest] = value

    missing = sorted(
        spec[dest]["flag"] for dest, v in values.items() if v is REQUIRED
    )
    if missing:
        raise ValidationError(f"missing required options: {', '.join(missing)}")
    return values


# ---------------------------------------------------------------------------
# subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_extract(o: dict) -> int:
    _, scene, _ = read_scene(o["scene"])
    dets = extract_detections(scene, o["source"])
    write_detections(dets, o["source"], o["out"])
    return 0


def _load_weights(path_str: Optional[str]) -> VotingWeights:
    if path_str is None:
        return VotingWeights()
    path = Path(path_str)
    if not path.is_file():
        raise ValidationError(f"weights file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"weights {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or set(data) - {"semantic", "instance"}:
        raise ValidationError(
            f"weights {path} must be an object with keys 'semantic'/'instance'"
        )
    return VotingWeights(
        semantic=tuple(data.get("semantic", VotingWeights().semantic)),
        instance=tuple(data.get("instance", VotingWeights().instance)),
    )


def _cmd_fuse(o: dict) -> int:
    _, sem_scene, _ = read_scene(o["semantic"])
    _, inst_scene, _ = read_scene(o["instance"])
    cfg = FusionConfig(
        iou_threshold=o["iou_threshold"],
        keep_unmatched_semantic=not o["drop_unmatched_semantic"],
        keep_unmatched_instance=not o["drop_unmatched_instance"],
    )
    fused = fuse(
        extract_detections(sem_scene, SOURCE_SEMANTIC),
        extract_detections(inst_scene, SOURCE_INSTANCE),
        _load_weights(o["weights"]),
        cfg,
    )
    write_scene(fused, o["out"], producer=SOURCE_FUSED)
    return 0


def _paired_scenes(gt_dir: str, pred_dir: str) -> list[tuple[str, Path, Path]]:
    gt_pkgs = {p.name: p for p in list_scene_packages(gt_dir)}
    pred_pkgs = {p.name: p for p in list_scene_packages(pred_dir)}
    only_gt = sorted(set(gt_pkgs) - set(pred_pkgs))
    only_pred = sorted(set(pred_pkgs) - set(gt_pkgs))
    if only_gt or only_pred:
        raise ValidationError(
            "unpaired scenes: "
            f"gt-only {only_gt or '[]'}, pred-only {only_pred or '[]'}"
        )
    if not gt_pkgs:
        raise ValidationError(
            f"no scene packages found under {gt_dir} and {pred_dir}"
        )
    return [(name, gt_pkgs[name], pred_pkgs[name]) for name in sorted(gt_pkgs)]


def _cmd_eval(o: dict) -> int:
    pairs = _paired_scenes(o["gt"], o["pred"])
    workers = max(1, int(o["workers"]))

    def stats_for(pair):
        _, gt_scene, _ = read_scene(pair[1])
        _, pred_scene, _ = read_scene(pair[2])
        return scene_stats(gt_scene, pred_scene)

    if workers == 1:
        stats = [stats_for(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(stats_for, pairs))  # map preserves order

    report = compile_report(stats)
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    names = [name for name, _, _ in pairs]
    write_counts_csv(names, report.per_scene_counts, out.parent / "counts.csv")
    save_report_figures(report, [s.gt_counts for s in stats], out.parent)
    return 0


def _cmd_counts(o: dict) -> int:
    pkgs = list_scene_packages(o["scenes"])
    if not pkgs:
        raise ValidationError(f"no scene packages found under {o['scenes']}")
    rows = []
    for pkg in pkgs:
        _, scene, _ = read_scene(pkg)
        rows.append(count_cells(scene))
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_counts_csv([p.name for p in pkgs], rows, out)
    return 0


def _cmd_augment(o: dict) -> int:
    pkgs = list_scene_packages(o["in_dir"])
    if not pkgs:
        raise ValidationError(f"no scene packages found under {o['in_dir']}")
    ops = tuple(s for s in str(o["noise_ops"]).split(",") if s)
    cfg = aug.AugmentConfig(
        target_size=o["target_size"],
        scale_range=(o["scale_min"], o["scale_max"]),
        flip_horizontal=not o["no_flip_horizontal"],
        flip_vertical=not o["no_flip_vertical"],
        noise_ops=ops,
        seed=o["seed"],
    )
    out_root = Path(o["out"])
    out_root.mkdir(parents=True, exist_ok=True)

    def run_one(item):
        index, pkg = item
        image, scene, producer = read_scene(pkg)
        rng = aug.make_rng(cfg.seed ^ index)
        image, scene = aug.augment_pair(image, scene, cfg, rng)
        write_scene(scene, out_root / pkg.name, image=image, producer=producer)

    workers = max(1, int(o["workers"]))
    items = list(enumerate(pkgs))
    if workers == 1:
        for item in items:
            run_one(item)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, items))
    return 0


def _cmd_synth(o: dict) -> int:
    out_root = Path(o["out"])
    out_root.mkdir(parents=True, exist_ok=True)
    if o["scenes"] < 1:
        raise ValidationError("--scenes must be at least 1")
    manifest = {"format": "synth-manifest/1", "seed": o["seed"], "scenes": []}
    for i in range(o["scenes"]):
        scene_seed = o["seed"] ^ i
        cfg = syn.SynthConfig(
            height=o["height"],
            width=o["width"],
            n_cells=o["cells"],
            radius_range=(o["radius_min"], o["radius_max"]),
            seed=scene_seed,
        )
        image, scene = syn.generate_scene(cfg)
        name = f"scene_{i:04d}"
        write_scene(scene, out_root / name, image=image)
        manifest["scenes"].append(
            {
                "name": name,
                "seed": scene_seed,
                "n_cells": o["cells"],
                "counts": list(count_cells(scene)),
            }
        )
    (out_root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return 0


def _cmd_render(o: dict) -> int:
    image, scene, _ = read_scene(o["scene"])
    if image is None:
        raise ValidationError(f"scene package {o['scene']} has no image.png")
    overlay = render_overlay(image, scene)
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay, mode="RGB").save(out)
    return 0


_RUNNERS = {
    "extract": _cmd_extract,
    "fuse": _cmd_fuse,
    "eval": _cmd_eval,
    "counts": _cmd_counts,
    "augment": _cmd_augment,
    "synth": _cmd_synth,
    "render": _cmd_render,
}


def _report_error(kind: str, message: str, code: int, as_json: bool) -> None:
    if as_json:
        line = json.dumps({"error": kind, "message": message, "code": code})
        print(line, file=sys.stderr)
    else:
        print(f"nucfuse: error: {message}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    passed = vars(args)
    command = passed.pop("command")
    json_errors = passed.get("json_errors", False)
    try:
        options = _effective_options(command, passed)
        return _RUNNERS[command](options)
    except ValidationError as exc:  # includes PackageError
        _report_error(type(exc).__name__, str(exc), 2, json_errors)
        return 2
    except OSError as exc:
        _report_error(type(exc).__name__, str(exc), 2, json_errors)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _report_error(type(exc).__name__, str(exc), 1, json_errors)
        return 1


if __name__ == "__main__":
    sys.exit(main())
