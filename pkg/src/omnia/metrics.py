"""Detection evaluation: per-category AP@IoU, mAP, oLRP, MoLRP.

Ground truth for evaluation is restricted to ground-truth provenance;
predicted instances never count as eval targets. All metrics are reported as
percentages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import Dataset, DetectionSet, Instance, ProvenanceKind, iou
from .errors import ConfigError, IntegrityError


@dataclass(frozen=True)
class CategoryReport:
    ap: float
    olrp: float | None  # None when the category has no ground truth
    n_gt: int
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    per_category: dict[str, CategoryReport]
    map: float
    molrp: float

    def to_dict(self) -> dict:
        return {
            "mAP": self.map,
            "MoLRP": self.molrp,
            "per_category": {
                name: {
                    "AP": rep.ap,
                    "oLRP": rep.olrp,
                    "counts": {"gt": rep.n_gt, "tp": rep.tp, "fp": rep.fp, "fn": rep.fn},
                }
                for name, rep in sorted(self.per_category.items())
            },
        }


def _eval_ground_truth(gt: Dataset, category_id: int) -> dict[int, list[Instance]]:
    out: dict[int, list[Instance]] = {}
    for inst in gt.instances:
        if inst.category_id == category_id and inst.provenance.kind is ProvenanceKind.GROUND_TRUTH:
            out.setdefault(inst.image_id, []).append(inst)
    return out


def _matched(dets: DetectionSet, gt: Dataset, category_id: int, iou_thresh: float):
    """Greedy matching in descending score order (ties by input order).

    Returns (scores, is_tp, matched_iou, n_gt), each aligned with the sorted
    detection order.
    """
    gt_by_image = _eval_ground_truth(gt, category_id)
    n_gt = sum(len(v) for v in gt_by_image.values())
    cat_dets = [d for d in dets if d.category_id == category_id]
    order = sorted(range(len(cat_dets)), key=lambda i: (-cat_dets[i].score, i))

    used: set[tuple[int, int]] = set()
    scores, is_tp, matched_iou = [], [], []
    for i in order:
        det = cat_dets[i]
        best_iou, best = 0.0, None
        for j, g in enumerate(gt_by_image.get(det.image_id, [])):
            if (det.image_id, j) in used:
                continue
            v = iou(det.box, g.box)
            if v > best_iou:
                best_iou, best = v, j
        scores.append(det.score)
        if best is not None and best_iou >= iou_thresh:
            used.add((det.image_id, best))
            is_tp.append(True)
            matched_iou.append(best_iou)
        else:
            is_tp.append(False)
            matched_iou.append(0.0)
    return np.array(scores), np.array(is_tp, dtype=bool), np.array(matched_iou), n_gt


def average_precision(dets: DetectionSet, gt: Dataset, category_id: int, iou_thresh: float = 0.5) -> float:
    """AP under the all-point (precision envelope) interpolation, in percent."""
    if category_id not in {c.id for c in gt.categories}:
        raise IntegrityError(f"category id {category_id} absent from taxonomy")
    scores, is_tp, _, n_gt = _matched(dets, gt, category_id, iou_thresh)
    if n_gt == 0:
        return 0.0
    if len(scores) == 0:
        return 0.0
    tp_cum = np.cumsum(is_tp)
    fp_cum = np.cumsum(~is_tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # precision envelope: running max from the right
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return 100.0 * ap


def olrp(dets: DetectionSet, gt: Dataset, category_id: int, tau: float = 0.5,
         iou_thresh: float = 0.5) -> float | None:
    """Optimal localization-recall-precision error, in percent (lower is
    better). Returns None when the category has no ground truth."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must be in (0,1), got {tau}")
    scores, is_tp, matched_iou, n_gt = _matched(dets, gt, category_id, iou_thresh)
    if n_gt == 0:
        return None
    if len(scores) == 0:
        return 100.0
    best = 1.0  # keeping no detections: all GT are false negatives
    # scores arrive sorted descending; threshold at each distinct score keeps
    # a prefix of the greedy matching
    for cut in range(1, len(scores) + 1):
        if cut < len(scores) and scores[cut] == scores[cut - 1]:
            continue
        tp_mask = is_tp[:cut]
        n_tp = int(tp_mask.sum())
        n_fp = cut - n_tp
        n_fn = n_gt - n_tp
        loc = (np.clip(1.0 - matched_iou[:cut][tp_mask], 0.0, None) / (1.0 - tau)).sum()
        lrp = (loc + n_fp + n_fn) / (n_tp + n_fp + n_fn)
        best = min(best, lrp)
    return 100.0 * best


def _optimal_counts(dets: DetectionSet, gt: Dataset, category_id: int, tau: float, iou_thresh: float):
    """TP/FP/FN at the oLRP-optimal score cut (for report bookkeeping)."""
    scores, is_tp, matched_iou, n_gt = _matched(dets, gt, category_id, iou_thresh)
    best = (1.0, 0, 0, n_gt)
    for cut in range(1, len(scores) + 1):
        if cut < len(scores) and scores[cut] == scores[cut - 1]:
            continue
        n_tp = int(is_tp[:cut].sum())
        n_fp = cut - n_tp
        n_fn = n_gt - n_tp
        loc = (np.clip(1.0 - matched_iou[:cut][is_tp[:cut]], 0.0, None) / (1.0 - tau)).sum()
        denom = n_tp + n_fp + n_fn
        lrp = (loc + n_fp + n_fn) / denom if denom else 0.0
        if lrp < best[0]:
            best = (lrp, n_tp, n_fp, n_fn)
    return best[1], best[2], best[3]


def evaluate(dets: DetectionSet, gt: Dataset, iou_thresh: float = 0.5, tau: float = 0.5) -> EvalReport:
    """Full evaluation over every category with at least one ground truth."""
    per_category: dict[str, CategoryReport] = {}
    aps, olrps = [], []
    for cat in gt.categories:
        n_gt = sum(
            1 for i in gt.instances
            if i.category_id == cat.id and i.provenance.kind is ProvenanceKind.GROUND_TRUTH
        )
        ap = average_precision(dets, gt, cat.id, iou_thresh)
        lrp = olrp(dets, gt, cat.id, tau, iou_thresh)
        tp, fp, fn = _optimal_counts(dets, gt, cat.id, tau, iou_thresh) if n_gt else (0, 0, 0)
        per_category[cat.name] = CategoryReport(ap, lrp, n_gt, tp, fp, fn)
        if n_gt > 0:
            aps.append(ap)
            olrps.append(lrp)
    mean_ap = float(np.mean(aps)) if aps else 0.0
    molrp = float(np.mean(olrps)) if olrps else 0.0
    return EvalReport(per_category, mean_ap, molrp)


def mean_ap(dets: DetectionSet, gt: Dataset, iou_thresh: float = 0.5) -> float:
    return evaluate(dets, gt, iou_thresh).map


def molrp(dets: DetectionSet, gt: Dataset, tau: float = 0.5, iou_thresh: float = 0.5) -> float:
    return evaluate(dets, gt, iou_thresh, tau).molrp
