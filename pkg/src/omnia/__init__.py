"""Detection dataset merging with soft distillation."""

from .annotations import (
    Box,
    Category,
    Dataset,
    Detection,
    Instance,
    Provenance,
    ProvenanceKind,
    iou,
    parse_dataset,
    parse_detections,
    serialize_dataset,
    serialize_detections,
    validate,
)
from .assignment import AnchorLabel, AssignConfig, RoiTarget, assign_anchors, assign_rois
from .merging import MergedTaxonomy, build_taxonomy, enrich, iterate, merge
from .metrics import EvalReport, average_precision, evaluate, mean_ap, molrp, olrp
from .selection import SelectionConfig, SelectionResult, select
from .softsig import LossBatch, binary_loss, categorical_loss, softsig_gradient, softsig_loss

__all__ = [name for name in dir() if not name.startswith("_")]
