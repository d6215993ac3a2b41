"""Detection metrics.

Lane F1 follows the rasterized-IoU protocol: every lane is drawn as a
30-pixel-wide line (a pixel is inside when its center lies within half the
width of the polyline), predictions match unmatched ground truths at IoU
>= 0.3, and precision/recall/F1 come straight from the TP/FP/FN counts.
Keypoint AP uses object keypoint similarity averaged over thresholds
0.50:0.05:0.95 with 101-point interpolated precision.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EvaluationError
from .ingest import ImageRecord, Instance

GREEDY = "greedy"
HUNGARIAN = "hungarian"

OKS_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class LaneEvalConfig:
    line_width: float = 30.0
    iou_threshold: float = 0.3

    def __post_init__(self):
        if self.line_width < 1:
            raise ValueError("line_width must be >= 1")
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold must be in (0, 1]")


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_scenario: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, per_scenario=None) -> "EvalReport":
        precision, recall, f1 = f1_from_counts(tp, fp, fn)
        return cls(tp, fp, fn, precision, recall, f1, per_scenario or {})

    def to_json_dict(self) -> dict:
        doc = {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }
        if self.per_scenario:
            doc["per_scenario"] = {
                tag: rep.to_json_dict() for tag, rep in sorted(self.per_scenario.items())
            }
        return doc


@dataclass(frozen=True)
class APReport:
    category: str
    ap: float
    thresholds: tuple
    ap_per_threshold: tuple
    precision_curves: tuple  # one 101-point interpolated curve per threshold
    n_predictions: int
    n_ground_truths: int

    def to_json_dict(self) -> dict:
        return {
            "category": self.category,
            "ap": self.ap,
            "thresholds": list(self.thresholds),
            "ap_per_threshold": list(self.ap_per_threshold),
            "precision_curves": [list(c) for c in self.precision_curves],
            "n_predictions": self.n_predictions,
            "n_ground_truths": self.n_ground_truths,
        }


def f1_from_counts(tp: int, fp: int, fn: int):
    """(precision, recall, f1) with every 0/0 defined as 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be >= 0")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    # Algebraically 2*P*R/(P+R); the count form divides exactly once.
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return precision, recall, f1


def _lane_points(inst: Instance):
    pts = [(kp.x, kp.y) for kp in inst.keypoints if kp.labeled]
    deduped = []
    for p in pts:
        if not deduped or p != deduped[-1]:
            deduped.append(p)
    return deduped


def rasterize_lane(points, width: float, canvas) -> np.ndarray:
    """Boolean (H, W) mask: pixel centers (integer coordinates) within
    width/2 of the polyline. Geometry outside the canvas is clipped."""
    cw, ch = int(canvas[0]), int(canvas[1])
    if cw <= 0 or ch <= 0:
        raise EvaluationError(f"canvas must be positive, got {canvas}")
    mask = np.zeros((ch, cw), dtype=bool)

    pts = []
    for p in points:
        q = (float(p[0]), float(p[1]))
        if not pts or q != pts[-1]:
            pts.append(q)
    if len(pts) < 2:
        return mask

    r = width / 2.0
    for (px, py), (qx, qy) in zip(pts[:-1], pts[1:]):
        x0 = max(0, math.floor(min(px, qx) - r))
        x1 = min(cw - 1, math.ceil(max(px, qx) + r))
        y0 = max(0, math.floor(min(py, qy) - r))
        y1 = min(ch - 1, math.ceil(max(py, qy) + r))
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64)[None, :]
        ys = np.arange(y0, y1 + 1, dtype=np.float64)[:, None]
        vx, vy = qx - px, qy - py
        norm2 = vx * vx + vy * vy
        t = ((xs - px) * vx + (ys - py) * vy) / norm2
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(xs - px - t * vx, ys - py - t * vy)
        mask[y0:y1 + 1, x0:x1 + 1] |= dist <= r
    return mask


def lane_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise EvaluationError(f"canvas mismatch: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a, b).sum())
    return inter / union


def match_lanes(preds, gts, cfg: LaneEvalConfig, canvas, matching: str = GREEDY):
    """Match lane predictions to ground truths on one canvas.

    Returns (tp, fp, fn, pairs) with pairs as (pred_idx, gt_idx, iou).
    Greedy: predictions by descending score (ties: lower index) each take
    the highest-IoU unmatched ground truth at or above the threshold.
    """
    for inst in list(preds) + list(gts):
        if inst.category != "lane":
            raise EvaluationError(f"match_lanes got category {inst.category!r}")

    pred_masks = [rasterize_lane(_lane_points(p), cfg.line_width, canvas) for p in preds]
    gt_masks = [rasterize_lane(_lane_points(g), cfg.line_width, canvas) for g in gts]
    iou = np.zeros((len(preds), len(gts)), dtype=np.float64)
    for i, pm in enumerate(pred_masks):
        for j, gm in enumerate(gt_masks):
            iou[i, j] = lane_iou(pm, gm)

    pairs = []
    if matching == GREEDY:
        taken = [False] * len(gts)
        order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
        for i in order:
            best_j = -1
            for j in range(len(gts)):
                if taken[j] or iou[i, j] < cfg.iou_threshold:
                    continue
                if best_j < 0 or iou[i, j] > iou[i, best_j]:
                    best_j = j
            if best_j >= 0:
                taken[best_j] = True
                pairs.append((i, best_j, float(iou[i, best_j])))
    elif matching == HUNGARIAN:
        if len(preds) and len(gts):
            weights = np.where(iou >= cfg.iou_threshold, iou, 0.0)
            rows, cols = linear_sum_assignment(-weights)
            for i, j in zip(rows, cols):
                if iou[i, j] >= cfg.iou_threshold:
                    pairs.append((int(i), int(j), float(iou[i, j])))
    else:
        raise EvaluationError(f"unknown matching mode {matching!r}")

    pairs.sort(key=lambda p: p[0])
    tp = len(pairs)
    fp = len(preds) - tp
    fn = len(gts) - tp
    return tp, fp, fn, pairs


def evaluate_lanes(pred_records, gt_records, cfg: LaneEvalConfig = LaneEvalConfig(),
                   matching: str = GREEDY, jobs: int = 1) -> EvalReport:
    """Aggregate per-image lane matching overall and per scenario tag.

    Records align by image_id; the ground-truth image size is the
    rasterization canvas. Prediction images with no ground-truth record
    count as all-FP with a warning. Per-image matching is pure, so
    ``jobs`` workers map over images and the counts reduce in canonical
    image order regardless of parallelism.
    """
    gt_by_id = {r.image_id: r for r in gt_records}
    pred_by_id = {r.image_id: r for r in pred_records}

    totals = [0, 0, 0]
    scenario_totals = {}

    def add(counts, tag):
        for slot, c in zip(range(3), counts):
            totals[slot] += c
        if tag is not None:
            bucket = scenario_totals.setdefault(tag, [0, 0, 0])
            for slot, c in zip(range(3), counts):
                bucket[slot] += c

    def match_one(image_id):
        gt_rec = gt_by_id[image_id]
        pred_rec = pred_by_id.get(image_id)
        gts = [i for i in gt_rec.instances if i.category == "lane"]
        preds = [] if pred_rec is None else [i for i in pred_rec.instances if i.category == "lane"]
        tp, fp, fn, _ = match_lanes(preds, gts, cfg, (gt_rec.width, gt_rec.height), matching)
        return tp, fp, fn

    ordered_ids = sorted(gt_by_id)
    if jobs > 1 and len(ordered_ids) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(match_one, ordered_ids))
    else:
        results = [match_one(i) for i in ordered_ids]
    for image_id, counts in zip(ordered_ids, results):
        add(counts, gt_by_id[image_id].scenario_tag)

    for image_id in sorted(set(pred_by_id) - set(gt_by_id)):
        lanes = [i for i in pred_by_id[image_id].instances if i.category == "lane"]
        if lanes:
            warnings.warn(f"image {image_id!r} has predictions but no ground truth; "
                          f"counting {len(lanes)} lanes as false positives")
            add((0, len(lanes), 0), pred_by_id[image_id].scenario_tag)

    per_scenario = {
        tag: EvalReport.from_counts(*counts) for tag, counts in scenario_totals.items()
    }
    return EvalReport.from_counts(*totals, per_scenario=per_scenario)


def oks(pred: Instance, gt: Instance, schema) -> float:
    """Object keypoint similarity: mean Gaussian score over the ground
    truth's labeled keypoints, normalized by gt bbox area and per-keypoint
    falloff."""
    if pred.category != gt.category:
        raise EvaluationError(
            f"category mismatch: {pred.category!r} vs {gt.category!r}")
    if len(gt.keypoints) != schema.keypoint_count or len(pred.keypoints) != schema.keypoint_count:
        raise EvaluationError("keypoint count does not match schema")
    area = gt.bbox_area()
    if area <= 0:
        raise EvaluationError("zero-area ground-truth bbox")
    total = 0.0
    count = 0
    for kappa, pk, gk in zip(schema.oks_kappas, pred.keypoints, gt.keypoints):
        if not gk.labeled:
            continue
        count += 1
        if not pk.labeled:
            continue
        d2 = (pk.x - gk.x) ** 2 + (pk.y - gk.y) ** 2
        total += math.exp(-d2 / (2.0 * area * kappa * kappa))
    if count == 0:
        return 0.0
    return total / count


def _greedy_keypoint_match(oks_matrix: np.ndarray, pred_order, threshold: float):
    """Greedy per-image matching; returns the matched flag per prediction."""
    matched = [False] * oks_matrix.shape[0]
    taken = [False] * oks_matrix.shape[1]
    for i in pred_order:
        best_j = -1
        for j in range(oks_matrix.shape[1]):
            if taken[j] or oks_matrix[i, j] < threshold:
                continue
            if best_j < 0 or oks_matrix[i, j] > oks_matrix[i, best_j]:
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            matched[i] = True
    return matched


def interpolated_ap(tp_flags, n_gts: int) -> tuple:
    """101-point interpolated average precision over ranked TP flags.

    Returns (ap, precision_curve).
    """
    grid = np.linspace(0.0, 1.0, 101)
    if n_gts == 0:
        return 0.0, tuple(0.0 for _ in grid)
    tp_cum = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    ranks = np.arange(1, len(tp_flags) + 1, dtype=np.float64)
    precision = tp_cum / ranks if len(tp_flags) else np.zeros(0)
    recall = tp_cum / n_gts if len(tp_flags) else np.zeros(0)
    curve = []
    for r in grid:
        mask = recall >= r - 1e-12
        curve.append(float(precision[mask].max()) if mask.any() else 0.0)
    return float(np.mean(curve)), tuple(curve)


def keypoint_ap(pred_records, gt_records, schema,
                thresholds=OKS_THRESHOLDS) -> APReport:
    """OKS average precision for one category over the given thresholds."""
    category = schema.category
    gt_by_id = {r.image_id: r for r in gt_records}
    pred_by_id = {r.image_id: r for r in pred_records}

    n_gts = 0
    entries = []  # (score, image_id, pred_idx, matched-per-threshold)
    for image_id in sorted(set(gt_by_id) | set(pred_by_id)):
        gt_rec = gt_by_id.get(image_id)
        pred_rec = pred_by_id.get(image_id)
        gts = [] if gt_rec is None else [i for i in gt_rec.instances if i.category == category]
        preds = [] if pred_rec is None else [i for i in pred_rec.instances if i.category == category]
        n_gts += len(gts)

        matrix = np.zeros((len(preds), len(gts)), dtype=np.float64)
        for i, p in enumerate(preds):
            for j, g in enumerate(gts):
                matrix[i, j] = oks(p, g, schema)
        order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
        matched = {t: _greedy_keypoint_match(matrix, order, t) for t in thresholds}
        for i, p in enumerate(preds):
            entries.append((p.score, image_id, i, {t: matched[t][i] for t in thresholds}))

    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    aps, curves = [], []
    for t in thresholds:
        flags = [e[3][t] for e in entries]
        ap_t, curve = interpolated_ap(flags, n_gts)
        aps.append(ap_t)
        curves.append(curve)
    mean_ap = float(np.mean(aps)) if aps else 0.0
    return APReport(
        category=category,
        ap=mean_ap,
        thresholds=tuple(thresholds),
        ap_per_threshold=tuple(aps),
        precision_curves=tuple(curves),
        n_predictions=len(entries),
        n_ground_truths=n_gts,
    )


def scale_statistic(records, category: str = None) -> float:
    """Mean bbox area over image area, in percent, across instances."""
    ratios = []
    for rec in records:
        image_area = rec.width * rec.height
        for inst in rec.instances:
            if category is not None and inst.category != category:
                continue
            ratios.append(inst.bbox_area() / image_area * 100.0)
    if not ratios:
        raise EvaluationError("no instances to compute the scale statistic")
    return float(sum(ratios) / len(ratios))
