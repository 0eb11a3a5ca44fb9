"""Data model for detection datasets: boxes, categories, instances, and the
JSON annotation/detection file formats.

All values are immutable after construction and safe to share between tasks.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, IntegrityError, ParseError


class ProvenanceKind(enum.Enum):
    GROUND_TRUTH = "gt"
    SAFE_PREDICTION = "safe"
    UNSAFE_PREDICTION = "unsafe"


@dataclass(frozen=True)
class Provenance:
    kind: ProvenanceKind
    score: float | None = None

    def __post_init__(self):
        if self.kind is ProvenanceKind.GROUND_TRUTH:
            if self.score is not None:
                raise ValueError("ground-truth provenance carries no score")
        else:
            if self.score is None or not 0.0 < self.score <= 1.0:
                raise ValueError(f"prediction score must be in (0,1], got {self.score}")


GROUND_TRUTH = Provenance(ProvenanceKind.GROUND_TRUTH)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in [x, y, w, h] convention; area = w*h, no +1."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise GeometryError(f"non-finite box coordinates: {self}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"box width/height must be positive: w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def clamped(self, width: float, height: float) -> "Box":
        """Clip to [0,width]x[0,height]; raises if nothing remains inside."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        if x2 - x1 <= 0 or y2 - y1 <= 0:
            raise GeometryError(f"box {self} lies entirely outside {width}x{height} image")
        return Box(x1, y1, x2 - x1, y2 - y1)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (N,4) and (M,4) arrays in xywh convention."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax1, ay1 = a[:, 0], a[:, 1]
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    ix = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    iy = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    return np.where(inter > 0, inter / union, 0.0)


@dataclass(frozen=True)
class Category:
    id: int
    name: str

    def __post_init__(self):
        if self.id <= 0:
            raise ValueError(f"category id must be positive, got {self.id}")
        if not self.name:
            raise ValueError("category name must be non-empty")


def canonical_name(name: str) -> str:
    return name.strip().lower()


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: float
    height: float
    domain_tag: str = ""


@dataclass(frozen=True)
class Instance:
    id: int
    image_id: int
    category_id: int
    box: Box
    provenance: Provenance = GROUND_TRUTH


@dataclass(frozen=True)
class Detection:
    """Raw scored detector output, prior to selection."""

    image_id: int
    category_id: int
    box: Box
    score: float

    def __post_init__(self):
        if not 0.0 < self.score <= 1.0:
            raise ValueError(f"detection score must be in (0,1], got {self.score}")


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageInfo, ...]
    categories: tuple[Category, ...]
    instances: tuple[Instance, ...]

    def image_by_id(self) -> dict[int, ImageInfo]:
        return {im.id: im for im in self.images}

    def category_by_id(self) -> dict[int, Category]:
        return {c.id: c for c in self.categories}

    def category_names(self) -> set[str]:
        return {canonical_name(c.name) for c in self.categories}

    def instances_by_image(self) -> dict[int, list[Instance]]:
        out: dict[int, list[Instance]] = {im.id: [] for im in self.images}
        for inst in self.instances:
            out[inst.image_id].append(inst)
        return out


# A DetectionSet is simply a tuple of Detection records.
DetectionSet = tuple[Detection, ...]


_PROVENANCE_TAGS = {p.value: p for p in ProvenanceKind}


def validate(d: Dataset) -> list[str]:
    """Check all dataset invariants; returns one message per violation."""
    violations: list[str] = []
    image_ids = set()
    for im in d.images:
        if im.id in image_ids:
            violations.append(f"duplicate image id {im.id}")
        image_ids.add(im.id)
    cat_ids: set[int] = set()
    cat_names: set[str] = set()
    for c in d.categories:
        if c.id in cat_ids:
            violations.append(f"duplicate category id {c.id}")
        cat_ids.add(c.id)
        name = canonical_name(c.name)
        if name in cat_names:
            violations.append(f"duplicate category name '{name}'")
        cat_names.add(name)
    images = d.image_by_id()
    inst_ids: set[int] = set()
    for inst in d.instances:
        if inst.id in inst_ids:
            violations.append(f"duplicate instance id {inst.id}")
        inst_ids.add(inst.id)
        if inst.image_id not in image_ids:
            violations.append(f"instance {inst.id} references missing image {inst.image_id}")
            continue
        if inst.category_id not in cat_ids:
            violations.append(f"instance {inst.id} references missing category {inst.category_id}")
        im = images[inst.image_id]
        b = inst.box
        if b.x < 0 or b.y < 0 or b.x2 > im.width + 1e-9 or b.y2 > im.height + 1e-9:
            violations.append(f"instance {inst.id} box exceeds image {im.id} bounds")
        if inst.provenance.kind is ProvenanceKind.GROUND_TRUTH and inst.provenance.score is not None:
            violations.append(f"instance {inst.id} is ground truth yet carries a score")
    return violations


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParseError(msg)


def parse_dataset(text: str) -> Dataset:
    """Parse the annotation JSON format into a validated Dataset.

    Boxes are clamped to image bounds. Missing provenance defaults to
    ground truth.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    _require(isinstance(raw, dict), "annotation file must be a JSON object")

    images = []
    for item in raw.get("images", []):
        images.append(ImageInfo(
            id=int(item["id"]),
            width=float(item["width"]),
            height=float(item["height"]),
            domain_tag=str(item.get("domain_tag", "")),
        ))
    categories = [Category(id=int(c["id"]), name=canonical_name(str(c["name"])))
                  for c in raw.get("categories", [])]

    image_map = {im.id: im for im in images}
    cat_ids = {c.id for c in categories}
    instances = []
    for item in raw.get("annotations", []):
        inst_id = int(item["id"])
        image_id = int(item["image_id"])
        category_id = int(item["category_id"])
        if image_id not in image_map:
            raise IntegrityError(f"annotation {inst_id} references missing image_id {image_id}")
        if category_id not in cat_ids:
            raise IntegrityError(f"annotation {inst_id} references missing category_id {category_id}")
        bbox = item["bbox"]
        _require(isinstance(bbox, (list, tuple)) and len(bbox) == 4,
                 f"annotation {inst_id} bbox must be [x,y,w,h]")
        box = Box(*(float(v) for v in bbox))
        im = image_map[image_id]
        box = box.clamped(im.width, im.height)
        tag = item.get("provenance", "gt")
        kind = _PROVENANCE_TAGS.get(tag)
        _require(kind is not None, f"annotation {inst_id} has unknown provenance '{tag}'")
        score = item.get("score")
        if kind is ProvenanceKind.GROUND_TRUTH:
            prov = GROUND_TRUTH
        else:
            prov = Provenance(kind, float(score))
        instances.append(Instance(inst_id, image_id, category_id, box, prov))

    dataset = Dataset(tuple(images), tuple(categories), tuple(instances))
    problems = validate(dataset)
    if problems:
        raise IntegrityError("; ".join(problems))
    return dataset


def serialize_dataset(d: Dataset) -> str:
    """Inverse of parse_dataset on the canonical field set."""
    raw = {
        "images": [
            {"id": im.id, "width": im.width, "height": im.height,
             **({"domain_tag": im.domain_tag} if im.domain_tag else {})}
            for im in d.images
        ],
        "categories": [{"id": c.id, "name": c.name} for c in d.categories],
        "annotations": [
            {
                "id": i.id,
                "image_id": i.image_id,
                "category_id": i.category_id,
                "bbox": [i.box.x, i.box.y, i.box.w, i.box.h],
                **({} if i.provenance.kind is ProvenanceKind.GROUND_TRUTH
                   else {"score": i.provenance.score}),
                "provenance": i.provenance.kind.value,
            }
            for i in d.instances
        ],
    }
    return json.dumps(raw, sort_keys=True, separators=(",", ":"))


def parse_detections(text: str) -> DetectionSet:
    """Parse the detection JSON format: an array of scored boxes."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    _require(isinstance(raw, list), "detection file must be a JSON array")
    out = []
    for item in raw:
        bbox = item["bbox"]
        _require(isinstance(bbox, (list, tuple)) and len(bbox) == 4, "detection bbox must be [x,y,w,h]")
        out.append(Detection(
            image_id=int(item["image_id"]),
            category_id=int(item["category_id"]),
            box=Box(*(float(v) for v in bbox)),
            score=float(item["score"]),
        ))
    return tuple(out)


def serialize_detections(dets: DetectionSet) -> str:
    raw = [
        {"image_id": d.image_id, "category_id": d.category_id,
         "bbox": [d.box.x, d.box.y, d.box.w, d.box.h], "score": d.score}
        for d in dets
    ]
    return json.dumps(raw, sort_keys=True, separators=(",", ":"))
