"""Partition raw detections into safe predictions, unsafe predictions, and
discards, using score thresholds and overlap with human labels."""

from __future__ import annotations

from dataclasses import dataclass, field

from .annotations import (
    Category,
    Detection,
    DetectionSet,
    Instance,
    Provenance,
    ProvenanceKind,
    canonical_name,
    iou,
)
from .errors import ConfigError, IntegrityError


@dataclass(frozen=True)
class SelectionConfig:
    threshold_low: float = 0.2
    threshold_high: float = 0.9
    # per-category (low, high) overrides, keyed by canonical category name
    overrides: dict[str, tuple[float, float]] = field(default_factory=dict)
    dedup_iou: float = 0.7

    def __post_init__(self):
        pairs = [(self.threshold_low, self.threshold_high), *self.overrides.values()]
        for low, high in pairs:
            if not 0.0 <= low < high <= 1.0:
                raise ConfigError(f"need 0 <= low < high <= 1, got low={low}, high={high}")
        if not 0.0 < self.dedup_iou <= 1.0:
            raise ConfigError(f"dedup_iou must be in (0,1], got {self.dedup_iou}")

    def thresholds_for(self, name: str | None) -> tuple[float, float]:
        if name is not None:
            over = self.overrides.get(canonical_name(name))
            if over is not None:
                return over
        return self.threshold_low, self.threshold_high


@dataclass(frozen=True)
class SelectionResult:
    safe: tuple[Instance, ...]
    unsafe: tuple[Instance, ...]
    discarded_low: int
    discarded_dedup: int

    @property
    def total(self) -> int:
        return len(self.safe) + len(self.unsafe) + self.discarded_low + self.discarded_dedup

    def stats(self) -> dict:
        per_category: dict[int, dict[str, int]] = {}
        for inst in self.safe:
            per_category.setdefault(inst.category_id, {"safe": 0, "unsafe": 0})["safe"] += 1
        for inst in self.unsafe:
            per_category.setdefault(inst.category_id, {"safe": 0, "unsafe": 0})["unsafe"] += 1
        return {
            "safe": len(self.safe),
            "unsafe": len(self.unsafe),
            "discarded_low": self.discarded_low,
            "discarded_dedup": self.discarded_dedup,
            "per_category": {str(k): v for k, v in sorted(per_category.items())},
        }


def select(
    detections: DetectionSet,
    ground_truth: dict[int, list[Instance]],
    cfg: SelectionConfig,
    categories: list[Category] | None = None,
    first_instance_id: int = 1,
) -> SelectionResult:
    """Bucket detections into safe / unsafe / discarded.

    Any detection overlapping a same-image ground truth above ``dedup_iou``
    is discarded first, regardless of category. The remaining detections are
    thresholded: score <= low discards, score > high is safe, anything in
    between is unsafe. Output order follows input order.

    ``ground_truth`` maps image_id to that image's human-labeled instances
    (possibly empty); its keys define the image set, and a detection on any
    other image is an error. ``categories`` (optional) resolves per-category
    threshold overrides by name.
    """
    for image_gt in ground_truth.values():
        for inst in image_gt:
            if inst.provenance.kind is not ProvenanceKind.GROUND_TRUTH:
                raise IntegrityError(f"instance {inst.id} in ground_truth is not ground truth")
    names = {c.id: c.name for c in categories} if categories else {}

    safe: list[Instance] = []
    unsafe: list[Instance] = []
    discarded_low = 0
    discarded_dedup = 0
    next_id = first_instance_id
    for det in detections:
        if det.image_id not in ground_truth:
            raise IntegrityError(f"detection references image_id {det.image_id} outside the image set")
        gt_here = ground_truth[det.image_id]
        if any(iou(det.box, g.box) > cfg.dedup_iou for g in gt_here):
            discarded_dedup += 1
            continue
        low, high = cfg.thresholds_for(names.get(det.category_id))
        if det.score <= low:
            discarded_low += 1
            continue
        kind = ProvenanceKind.SAFE_PREDICTION if det.score > high else ProvenanceKind.UNSAFE_PREDICTION
        inst = Instance(
            id=next_id,
            image_id=det.image_id,
            category_id=det.category_id,
            box=det.box,
            provenance=Provenance(kind, det.score),
        )
        next_id += 1
        (safe if kind is ProvenanceKind.SAFE_PREDICTION else unsafe).append(inst)
    return SelectionResult(tuple(safe), tuple(unsafe), discarded_low, discarded_dedup)
