"""Three-way anchor labeling, ROI target construction with loss masks, and
deterministic batch sampling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .annotations import Box, Instance, ProvenanceKind, iou_matrix
from .errors import ConfigError


_TRUSTED = (ProvenanceKind.GROUND_TRUTH, ProvenanceKind.SAFE_PREDICTION)


@dataclass(frozen=True)
class AssignConfig:
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    roi_pos_iou: float = 0.5
    undefined_iou: float = 0.3
    rpn_batch: int = 256
    roi_batch: int = 124
    rpn_pos_fraction: float = 0.5
    roi_pos_fraction: float = 0.25
    # "pooled" samples unsafe-matched ROIs with background; "excluded" drops
    # them from sampling entirely (the discard-unsafe ablation)
    unsafe_sampling: str = "pooled"
    seed: int = 3

    def __post_init__(self):
        if not 0.0 < self.rpn_neg_iou <= self.rpn_pos_iou <= 1.0:
            raise ConfigError("need 0 < rpn_neg_iou <= rpn_pos_iou <= 1")
        for frac in (self.rpn_pos_fraction, self.roi_pos_fraction):
            if not 0.0 < frac < 1.0:
                raise ConfigError(f"positive fraction must be in (0,1), got {frac}")
        if self.rpn_batch <= 0 or self.roi_batch <= 0:
            raise ConfigError("batch sizes must be positive")
        if self.unsafe_sampling not in ("pooled", "excluded"):
            raise ConfigError(f"unknown unsafe_sampling mode {self.unsafe_sampling!r}")


class AnchorLabel(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNDEFINED = "undefined"


BACKGROUND = 0  # class target 0; categories are 1..C


@dataclass(frozen=True)
class RoiTarget:
    """Per-ROI classification target with the loss masks.

    ``weights`` is ordered categories 1..C then background (length C+1),
    matching the loss module's logit layout.
    """

    class_target: int  # BACKGROUND or category id 1..C
    mask: int  # 0 iff the ROI matched an unsafe prediction
    weights: tuple[int, ...]
    regression_valid: int
    matched_instance_id: int | None = None

    @property
    def is_positive(self) -> bool:
        return self.class_target != BACKGROUND and self.mask == 1

    @property
    def is_unsafe_matched(self) -> bool:
        return self.mask == 0


def _boxes_array(boxes: list[Box]) -> np.ndarray:
    return np.array([[b.x, b.y, b.w, b.h] for b in boxes], dtype=float).reshape(-1, 4)


def assign_anchors(anchors: list[Box], instances: list[Instance], cfg: AssignConfig) -> list[AnchorLabel]:
    """Label each anchor positive / negative / undefined.

    Positive: overlaps a ground truth or safe prediction at >= rpn_pos_iou.
    Undefined: overlaps an unsafe prediction at >= undefined_iou, or sits in
    the [rpn_neg_iou, rpn_pos_iou) ignore band against trusted boxes.
    Negative: everything else.
    """
    if not anchors:
        return []
    trusted = [i for i in instances if i.provenance.kind in _TRUSTED]
    unsafe = [i for i in instances if i.provenance.kind is ProvenanceKind.UNSAFE_PREDICTION]
    anchor_arr = _boxes_array(anchors)
    n = len(anchors)
    max_trusted = np.zeros(n)
    if trusted:
        max_trusted = iou_matrix(anchor_arr, _boxes_array([i.box for i in trusted])).max(axis=1)
    max_unsafe = np.zeros(n)
    if unsafe:
        max_unsafe = iou_matrix(anchor_arr, _boxes_array([i.box for i in unsafe])).max(axis=1)

    labels = []
    for i in range(n):
        if max_trusted[i] >= cfg.rpn_pos_iou:
            labels.append(AnchorLabel.POSITIVE)
        elif max_unsafe[i] >= cfg.undefined_iou:
            labels.append(AnchorLabel.UNDEFINED)
        elif max_trusted[i] < cfg.rpn_neg_iou:
            labels.append(AnchorLabel.NEGATIVE)
        else:
            labels.append(AnchorLabel.UNDEFINED)
    return labels


def assign_rois(
    rois: list[Box],
    instances: list[Instance],
    cfg: AssignConfig,
    category_remap: dict[int, int] | None = None,
    n_categories: int | None = None,
) -> list[RoiTarget]:
    """Match each ROI to its highest-IoU instance at >= roi_pos_iou (ties by
    lowest instance id) and derive class target, mask and binary weights.

    ``category_remap`` maps instance category ids onto contiguous 1..C; when
    omitted, instance category ids are assumed already contiguous and ``n_categories``
    defaults to their maximum.
    """
    if category_remap is None:
        category_remap = {}
    def cat_of(inst: Instance) -> int:
        return category_remap.get(inst.category_id, inst.category_id)

    if n_categories is None:
        n_categories = max((cat_of(i) for i in instances), default=1)
    all_one = tuple([1] * (n_categories + 1))

    targets: list[RoiTarget] = []
    if not rois:
        return targets
    matrix = None
    if instances:
        matrix = iou_matrix(_boxes_array(rois), _boxes_array([i.box for i in instances]))
        order = sorted(range(len(instances)), key=lambda j: instances[j].id)

    for r in range(len(rois)):
        best_j, best_iou = None, 0.0
        if matrix is not None:
            for j in order:
                v = matrix[r, j]
                if v > best_iou:
                    best_iou, best_j = v, j
        if best_j is None or best_iou < cfg.roi_pos_iou:
            targets.append(RoiTarget(BACKGROUND, 1, all_one, 0, None))
            continue
        inst = instances[best_j]
        cat = cat_of(inst)
        if not 1 <= cat <= n_categories:
            raise ConfigError(f"instance category {cat} outside 1..{n_categories}")
        if inst.provenance.kind in _TRUSTED:
            targets.append(RoiTarget(cat, 1, all_one, 1, inst.id))
        else:
            weights = list(all_one)
            weights[cat - 1] = 0  # matched category column
            weights[n_categories] = 0  # background column
            targets.append(RoiTarget(BACKGROUND, 0, tuple(weights), 0, inst.id))
    return targets


def _rng(seed: int, image_id: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, image_id])


def _split_quota(batch: int, pos_fraction: float, n_pos: int, n_neg: int) -> tuple[int, int]:
    """Positive/negative draw counts with deficit fill from the other bucket."""
    want_pos = min(math.ceil(pos_fraction * batch), n_pos)
    want_neg = min(batch - want_pos, n_neg)
    if want_pos + want_neg < batch:  # refill positives if negatives ran short
        want_pos = min(batch - want_neg, n_pos)
    return want_pos, want_neg


def sample_rpn_batch(labels: list[AnchorLabel], cfg: AssignConfig, image_id: int = 0) -> list[int]:
    """Sample anchor indices for one RPN batch; undefined anchors are never
    eligible. Deterministic given (cfg.seed, image_id)."""
    pos = [i for i, l in enumerate(labels) if l is AnchorLabel.POSITIVE]
    neg = [i for i, l in enumerate(labels) if l is AnchorLabel.NEGATIVE]
    if not pos and not neg:
        raise ConfigError("no eligible anchors to sample")
    n_pos, n_neg = _split_quota(cfg.rpn_batch, cfg.rpn_pos_fraction, len(pos), len(neg))
    rng = _rng(cfg.seed, image_id)
    chosen = list(rng.choice(pos, size=n_pos, replace=False)) if n_pos else []
    chosen += list(rng.choice(neg, size=n_neg, replace=False)) if n_neg else []
    return sorted(int(i) for i in chosen)


def sample_roi_batch(targets: list[RoiTarget], cfg: AssignConfig, image_id: int = 0) -> list[int]:
    """Sample ROI indices: roi_pos_fraction positives, remainder drawn
    uniformly from the pooled background/unsafe-matched set (or background
    only when unsafe_sampling == "excluded")."""
    pos = [i for i, t in enumerate(targets) if t.is_positive]
    rest = [
        i for i, t in enumerate(targets)
        if not t.is_positive and (cfg.unsafe_sampling == "pooled" or not t.is_unsafe_matched)
    ]
    if not pos and not rest:
        raise ConfigError("no eligible ROIs to sample")
    n_pos, n_rest = _split_quota(cfg.roi_batch, cfg.roi_pos_fraction, len(pos), len(rest))
    rng = _rng(cfg.seed, image_id)
    chosen = list(rng.choice(pos, size=n_pos, replace=False)) if n_pos else []
    chosen += list(rng.choice(rest, size=n_rest, replace=False)) if n_rest else []
    return sorted(int(i) for i in chosen)


def assignment_dump(
    anchors: list[Box],
    labels: list[AnchorLabel],
    rois: list[Box],
    targets: list[RoiTarget],
) -> dict:
    """JSON-ready per-image dump of the assignment, for golden-file tests."""
    return {
        "anchors": [[b.x, b.y, b.w, b.h] for b in anchors],
        "anchor_labels": [l.value for l in labels],
        "rois": [[b.x, b.y, b.w, b.h] for b in rois],
        "roi_targets": [
            {
                "class_target": t.class_target,
                "mask": t.mask,
                "weights": list(t.weights),
                "regression_valid": t.regression_valid,
                "matched_instance_id": t.matched_instance_id,
            }
            for t in targets
        ],
    }
