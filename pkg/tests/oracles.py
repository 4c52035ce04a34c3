"""Independent reference implementations used to cross-check the package.

Everything here recomputes results from raw rasters with plain Python data
structures — coordinate sets, dicts, Fractions — sharing no logic with the
library. numpy appears only to *gather* pixel coordinates out of arrays;
all decisions (overlap, grouping, voting, matching, formulas) are made in
pure Python. Keep it that way: these functions exist to disagree with the
package whenever the package is wrong.
"""
from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction

import numpy as np

SEM_WEIGHTS = {
    1: Fraction(2),
    2: Fraction(1),
    3: Fraction(1),
    4: Fraction(2),
    5: Fraction(2),
    6: Fraction(1),
}
INST_WEIGHT = Fraction(3, 2)  # flat 1.5 for every class


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def box_iou_sets(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> Fraction:
    """IoU of two half-open boxes via coordinate-range set intersections."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    nx = len(set(range(ax0, ax1)) & set(range(bx0, bx1)))
    ny = len(set(range(ay0, ay1)) & set(range(by0, by1)))
    inter = nx * ny
    area_a = len(set(range(ax0, ax1))) * len(set(range(ay0, ay1)))
    area_b = len(set(range(bx0, bx1))) * len(set(range(by0, by1)))
    union = area_a + area_b - inter
    return Fraction(inter, union) if union else Fraction(0)


def mask_iou_sets(a: set, b: set) -> Fraction:
    union = len(a | b)
    return Fraction(len(a & b), union) if union else Fraction(0)


def tight_box(pixels: set[tuple[int, int]]) -> tuple[int, int, int, int]:
    """(x0, y0, x1, y1) half-open around a set of (row, col) pixels."""
    rows = [r for r, _ in pixels]
    cols = [c for _, c in pixels]
    return (min(cols), min(rows), max(cols) + 1, max(rows) + 1)


def flood_components(class_map: np.ndarray) -> list[set[tuple[int, int]]]:
    """4-connected same-class components by BFS, in scan order."""
    h, w = class_map.shape
    seen = set()
    components = []
    for r in range(h):
        for c in range(w):
            if class_map[r, c] == 0 or (r, c) in seen:
                continue
            value = class_map[r, c]
            queue = [(r, c)]
            seen.add((r, c))
            blob = set()
            while queue:
                cr, cc = queue.pop()
                blob.add((cr, cc))
                for nr, nc in ((cr - 1, cc), (cr + 1, cc), (cr, cc - 1), (cr, cc + 1)):
                    if (
                        0 <= nr < h
                        and 0 <= nc < w
                        and (nr, nc) not in seen
                        and class_map[nr, nc] == value
                    ):
                        seen.add((nr, nc))
                        queue.append((nr, nc))
            components.append(blob)
    return components


# ---------------------------------------------------------------------------
# extraction from rasters
# ---------------------------------------------------------------------------

def cells_from_rasters(
    instance_map: np.ndarray, class_map: np.ndarray
) -> list[dict]:
    """One record per instance id: pixels (set of (r, c)), majority label,
    tight box. Sorted by (y0, x0, first scan-order pixel, id)."""
    cells = []
    for cell_id in sorted(int(v) for v in np.unique(instance_map) if v != 0):
        rows, cols = np.nonzero(instance_map == cell_id)
        pixels = set(zip(rows.tolist(), cols.tolist()))
        labels = Counter(
            int(class_map[r, c]) for r, c in pixels if class_map[r, c] != 0
        )
        top = max(labels.values())
        label = min(lab for lab, n in labels.items() if n == top)
        box = tight_box(pixels)
        first = min(r * instance_map.shape[1] + c for r, c in pixels)
        cells.append(
            {"id": cell_id, "label": label, "pixels": pixels, "box": box, "first": first}
        )
    cells.sort(key=lambda cell: (cell["box"][1], cell["box"][0], cell["first"], cell["id"]))
    return cells


def counts_from_rasters(instance_map, class_map) -> tuple[int, ...]:
    counts = [0] * 6
    for cell in cells_from_rasters(instance_map, class_map):
        counts[cell["label"] - 1] += 1
    return tuple(counts)


# ---------------------------------------------------------------------------
# voting
# ---------------------------------------------------------------------------

def vote_table(members: list[tuple[int, str]]) -> int:
    """Exact-arithmetic weighted vote with the default weights."""
    scores = {c: Fraction(0) for c in range(1, 7)}
    semantic_labels = set()
    for label, source in members:
        if source == "semantic":
            scores[label] += SEM_WEIGHTS[label]
            semantic_labels.add(label)
        else:
            scores[label] += INST_WEIGHT
    best = max(scores.values())
    tied = sorted(c for c, s in scores.items() if s == best)
    tied_semantic = [c for c in tied if c in semantic_labels]
    return tied_semantic[0] if tied_semantic else tied[0]


# ---------------------------------------------------------------------------
# full fusion reference
# ---------------------------------------------------------------------------

def fuse_reference(
    sem_instance: np.ndarray,
    sem_class: np.ndarray,
    inst_instance: np.ndarray,
    inst_class: np.ndarray,
    iou_threshold: Fraction = Fraction(1, 2),
    keep_unmatched_semantic: bool = True,
    keep_unmatched_instance: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force re-derivation of the fused scene from four rasters.

    Enumerates every cross-producer pair, thresholds box IoU (exact
    rational arithmetic), groups by breadth-first search over the overlap
    edges, unions masks as coordinate sets, votes with the Fraction table,
    and paints in canonical order, earlier entry winning contested pixels.
    """
    h, w = sem_instance.shape
    sem_cells = cells_from_rasters(sem_instance, sem_class)
    inst_cells = cells_from_rasters(inst_instance, inst_class)

    edges: dict[tuple[str, int], set[tuple[str, int]]] = {}
    for i, s in enumerate(sem_cells):
        for j, t in enumerate(inst_cells):
            if box_iou_sets(s["box"], t["box"]) >= iou_threshold:
                edges.setdefault(("s", i), set()).add(("i", j))
                edges.setdefault(("i", j), set()).add(("s", i))

    visited = set()
    groups = []
    for start in sorted(edges):
        if start in visited:
            continue
        stack, component = [start], set()
        while stack:
            node = stack.pop()
            if node in visited:
                continue
            visited.add(node)
            component.add(node)
            stack.extend(edges[node] - visited)
        groups.append(component)

    def cell_of(node):
        kind, idx = node
        return sem_cells[idx] if kind == "s" else inst_cells[idx]

    entries = []  # (sort key pieces, pixels, label); groups first, then singles
    for component in groups:
        pixels = set()
        members = []
        for node in component:
            cell = cell_of(node)
            pixels |= cell["pixels"]
            members.append((cell["label"], "semantic" if node[0] == "s" else "instance"))
        label = vote_table(members)
        entries.append((pixels, label))
    for kind, cells, keep in (
        ("s", sem_cells, keep_unmatched_semantic),
        ("i", inst_cells, keep_unmatched_instance),
    ):
        for idx, cell in enumerate(cells):
            if (kind, idx) not in edges and keep:
                entries.append((cell["pixels"], cell["label"]))

    def entry_key(entry):
        pixels, _ = entry
        x0, y0, _, _ = tight_box(pixels)
        offsets = tuple(sorted(r * w + c for r, c in pixels))
        return (y0, x0, offsets[0], offsets)

    entries.sort(key=entry_key)

    out_instance = np.zeros((h, w), dtype=np.int32)
    out_class = np.zeros((h, w), dtype=np.uint8)
    next_id = 0
    for pixels, label in entries:
        free = [(r, c) for r, c in sorted(pixels) if out_instance[r, c] == 0]
        if not free:
            continue
        next_id += 1
        for r, c in free:
            out_instance[r, c] = next_id
            out_class[r, c] = label
    return out_instance, out_class


# ---------------------------------------------------------------------------
# metrics references
# ---------------------------------------------------------------------------

def match_reference(gt_cells: list[dict], pred_cells: list[dict]):
    """All-pairs IoU>1/2 matching; returns (pairs, unmatched_gt, unmatched_pred)
    with pairs as (gt record, pred record, Fraction iou)."""
    pairs = []
    used_pred = set()
    for g in gt_cells:
        for p in pred_cells:
            if p["id"] in used_pred:
                continue
            iou = mask_iou_sets(g["pixels"], p["pixels"])
            if iou > Fraction(1, 2):
                pairs.append((g, p, iou))
                used_pred.add(p["id"])
    matched_gt = {g["id"] for g, _, _ in pairs}
    unmatched_gt = [g for g in gt_cells if g["id"] not in matched_gt]
    unmatched_pred = [p for p in pred_cells if p["id"] not in used_pred]
    return pairs, unmatched_gt, unmatched_pred


def pq_reference(gt_cells, pred_cells) -> float:
    pairs, unmatched_gt, unmatched_pred = match_reference(gt_cells, pred_cells)
    denom = len(pairs) + Fraction(1, 2) * (len(unmatched_gt) + len(unmatched_pred))
    if denom == 0:
        return 1.0
    return float(sum((iou for _, _, iou in pairs), Fraction(0)) / denom)


def pq_plus_reference(scene_pairs):
    """scene_pairs: list of ((gt_inst, gt_cls), (pred_inst, pred_cls)).
    Returns (per-class list with None, mean over defined classes or 1.0)."""
    per_class = []
    for c in range(1, 7):
        iou_total = Fraction(0)
        tp = fp = fn = 0
        for (gi, gc), (pi, pc) in scene_pairs:
            gt_cells = [x for x in cells_from_rasters(gi, gc) if x["label"] == c]
            pred_cells = [x for x in cells_from_rasters(pi, pc) if x["label"] == c]
            pairs, ugt, upred = match_reference(gt_cells, pred_cells)
            iou_total += sum((iou for _, _, iou in pairs), Fraction(0))
            tp += len(pairs)
            fp += len(upred)
            fn += len(ugt)
        denom = tp + Fraction(1, 2) * (fp + fn)
        per_class.append(float(iou_total / denom) if denom > 0 else None)
    defined = [v for v in per_class if v is not None]
    mean = math.fsum(defined) / len(defined) if defined else 1.0
    return per_class, mean


def binary_pq_mean_reference(scene_pairs) -> float:
    values = []
    for (gi, gc), (pi, pc) in scene_pairs:
        values.append(pq_reference(cells_from_rasters(gi, gc), cells_from_rasters(pi, pc)))
    return math.fsum(values) / len(values)


def r2_reference(gt_rows, pred_rows):
    """Direct-formula per-class R² over count rows; returns (list, mean)."""
    n = len(gt_rows)
    out = []
    for c in range(6):
        g = [row[c] for row in gt_rows]
        p = [row[c] for row in pred_rows]
        mean_g = math.fsum(g) / n
        ss_res = math.fsum((gv - pv) ** 2 for gv, pv in zip(g, p))
        ss_tot = math.fsum((gv - mean_g) ** 2 for gv in g)
        if ss_tot == 0.0:
            out.append(1.0 if ss_res == 0.0 else None)
        else:
            out.append(1.0 - ss_res / ss_tot)
    defined = [v for v in out if v is not None]
    mean = math.fsum(defined) / len(defined) if defined else None
    return out, mean


def cross_entropy_reference(y_rows, p_rows) -> float:
    """Double-loop Eq. of the mean cross entropy with the 1e-12 clamp."""
    m = len(y_rows)
    k = len(y_rows[0])
    total = 0.0
    for y_row, p_row in zip(y_rows, p_rows):
        for y, p in zip(y_row, p_row):
            if y:
                total += -math.log(max(p, 1e-12))
    return total / (m * k)
