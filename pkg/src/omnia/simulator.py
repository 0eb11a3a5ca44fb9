"""Deterministic synthetic scenes plus a parameterized noisy detector, so the
whole merge pipeline and its ablation variants run end-to-end against a
hidden full annotation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .annotations import (
    Box,
    Category,
    Dataset,
    Detection,
    DetectionSet,
    ImageInfo,
    Instance,
    Provenance,
    ProvenanceKind,
    canonical_name,
    iou,
    validate,
)
from .assignment import AssignConfig, assign_anchors, assign_rois, sample_roi_batch
from .errors import ConfigError, OmniaError
from .merging import MergeResult, build_taxonomy, enrich, merge
from .metrics import evaluate
from .selection import SelectionConfig
from .softsig import batch_from_targets, binary_loss, categorical_loss, softsig_loss

VARIANTS = ("naive", "hard", "discard", "softsig")


@dataclass(frozen=True)
class SceneConfig:
    n_images: int = 200
    image_size: int = 256
    taxonomy: tuple[str, ...] = ("bag", "car", "dress", "hydrant", "shoe", "truck")
    objects_min: int = 2
    objects_max: int = 6
    box_min: float = 24.0
    box_max: float = 96.0
    overlap_cap: float = 0.2
    seed: int = 3
    domain_tag: str = "synthetic"

    def __post_init__(self):
        if self.objects_min > self.objects_max or self.box_min > self.box_max:
            raise ConfigError("empty objects/box-size range")
        if not 0.0 <= self.overlap_cap < 1.0:
            raise ConfigError(f"overlap cap must be in [0,1), got {self.overlap_cap}")
        if not self.taxonomy:
            raise ConfigError("taxonomy must be non-empty")


@dataclass(frozen=True)
class DetectorModel:
    recall: float = 0.85
    jitter_sigma: float = 0.015  # fraction of box size, well-localized mode
    jitter_outlier_prob: float = 0.3  # chance of a poorly localized box
    jitter_outlier_sigma: float = 0.35
    score_base: float = 0.15
    score_iou_coeff: float = 0.9
    score_noise_sigma: float = 0.03
    fp_per_image: float = 1.0
    fp_score_loc: float = 0.3
    fp_score_scale: float = 0.2
    degradation: float = 0.75  # recall multiplier on cross-domain images
    domain_tag: str = "synthetic"
    seed: int = 3

    def __post_init__(self):
        if not 0.0 <= self.recall <= 1.0 or not 0.0 <= self.degradation <= 1.0:
            raise ConfigError("recall and degradation must be probabilities")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter sigma must be nonnegative")


def generate_scenes(cfg: SceneConfig, id_offset: int = 0) -> Dataset:
    """Sample a fully annotated dataset; deterministic per seed. Pairwise GT
    IoU within an image never exceeds the overlap cap."""
    categories = tuple(Category(i + 1, canonical_name(n)) for i, n in enumerate(cfg.taxonomy))
    images = []
    instances = []
    size = float(cfg.image_size)
    next_inst = 1
    for k in range(cfg.n_images):
        image_id = id_offset + k + 1
        rng = np.random.default_rng([cfg.seed, image_id])
        images.append(ImageInfo(image_id, size, size, cfg.domain_tag))
        n_objects = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
        placed: list[Box] = []
        for _ in range(n_objects):
            box = None
            for _attempt in range(200):
                w = float(rng.uniform(cfg.box_min, cfg.box_max))
                h = float(rng.uniform(cfg.box_min, cfg.box_max))
                x = float(rng.uniform(0.0, size - w))
                y = float(rng.uniform(0.0, size - h))
                candidate = Box(x, y, w, h)
                if all(iou(candidate, other) <= cfg.overlap_cap for other in placed):
                    box = candidate
                    break
            if box is None:
                raise OmniaError(f"could not pack {n_objects} objects into image {image_id}")
            placed.append(box)
            category_id = int(rng.integers(1, len(categories) + 1))
            instances.append(Instance(next_inst, image_id, category_id, box))
            next_inst += 1
    dataset = Dataset(tuple(images), categories, tuple(instances))
    assert not validate(dataset)
    return dataset


def strip_categories(d: Dataset, names: set[str]) -> Dataset:
    """Drop the named categories and all their instances."""
    doomed = {canonical_name(n) for n in names}
    keep_cats = tuple(c for c in d.categories if c.name not in doomed)
    keep_ids = {c.id for c in keep_cats}
    return Dataset(
        d.images,
        keep_cats,
        tuple(i for i in d.instances if i.category_id in keep_ids),
    )


def keep_categories(d: Dataset, names: set[str]) -> Dataset:
    wanted = {canonical_name(n) for n in names}
    return strip_categories(d, {c.name for c in d.categories} - wanted)


def simulate_detector(hidden: Dataset, model: DetectorModel, categories: list[Category]) -> DetectionSet:
    """Noisy detections for the requested categories against hidden truth.

    Emission, jitter and score noise are drawn per hidden instance whether or
    not the instance is emitted, so raising the effective recall (e.g. by
    removing cross-domain degradation) yields a superset of detections.
    Deterministic per (model seed, image id).
    """
    by_name = {c.name: c.id for c in categories}
    hidden_names = {c.id: c.name for c in hidden.categories}
    size_by_image = {im.id: (im.width, im.height) for im in hidden.images}
    out: list[Detection] = []
    for im in hidden.images:
        rng = np.random.default_rng([model.seed, im.id])
        effective = model.recall * (model.degradation if im.domain_tag != model.domain_tag else 1.0)
        for inst in hidden.instances:
            if inst.image_id != im.id:
                continue
            name = hidden_names[inst.category_id]
            if name not in by_name:
                continue
            u = float(rng.uniform())
            b = inst.box
            sigma = (model.jitter_outlier_sigma if rng.uniform() < model.jitter_outlier_prob
                     else model.jitter_sigma)
            dx, dy, dw, dh = rng.normal(0.0, sigma, size=4)
            score_noise = float(rng.normal(0.0, model.score_noise_sigma))
            if u >= effective:
                continue
            w = max(2.0, b.w * (1.0 + dw))
            h = max(2.0, b.h * (1.0 + dh))
            box = Box(b.x + dx * b.w, b.y + dy * b.h, w, h)
            width, height = size_by_image[im.id]
            if box.x + w <= 0 or box.y + h <= 0 or box.x >= width or box.y >= height:
                continue  # jittered entirely off-image: nothing to emit
            box = box.clamped(width, height)
            score = model.score_base + model.score_iou_coeff * iou(box, b) + score_noise
            out.append(Detection(im.id, by_name[name], box, float(np.clip(score, 0.01, 1.0))))
        n_fp = int(rng.poisson(model.fp_per_image))
        width, height = size_by_image[im.id]
        for _ in range(n_fp):
            w = float(rng.uniform(12.0, 0.5 * width))
            h = float(rng.uniform(12.0, 0.5 * height))
            x = float(rng.uniform(0.0, width - w))
            y = float(rng.uniform(0.0, height - h))
            cat = categories[int(rng.integers(len(categories)))]
            score = abs(float(rng.normal(model.fp_score_loc, model.fp_score_scale)))
            out.append(Detection(im.id, cat.id, Box(x, y, w, h), float(np.clip(score, 0.01, 1.0))))
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = SceneConfig()
    names_a: tuple[str, ...] = ("bag", "dress", "shoe")
    names_b: tuple[str, ...] = ("car", "hydrant", "truck")
    detector_a: DetectorModel = DetectorModel(domain_tag="domain_a", seed=11)
    detector_b: DetectorModel = DetectorModel(domain_tag="domain_b", seed=12)
    selection: SelectionConfig = SelectionConfig()
    assign: AssignConfig = AssignConfig()
    variants: tuple[str, ...] = VARIANTS
    rounds: int = 1
    threshold_sweep: tuple[float, ...] = ()
    shared_policy: str | None = None  # must be "gt-only" when names overlap
    seed: int = 3

    def __post_init__(self):
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown variants: {sorted(unknown)}")
        shared = set(map(canonical_name, self.names_a)) & set(map(canonical_name, self.names_b))
        if shared and self.shared_policy != "gt-only":
            raise ConfigError(
                f"categories {sorted(shared)} appear in both subsets; set shared_policy='gt-only'")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")


def _as_detections(dataset: Dataset, trusted_only: bool = True) -> DetectionSet:
    """Score a target set as detections: every trusted target counts as a
    full-confidence detection (ground truths and safe predictions are equally
    trusted at training time)."""
    out = []
    for inst in dataset.instances:
        if trusted_only and inst.provenance.kind is ProvenanceKind.UNSAFE_PREDICTION:
            continue
        out.append(Detection(inst.image_id, inst.category_id, inst.box, 1.0))
    return tuple(out)


def _hidden_merged(hidden_a: Dataset, hidden_b: Dataset, merged: MergeResult) -> Dataset:
    """The full hidden annotation expressed over the merged images/taxonomy."""
    taxonomy = merged.dataset.categories
    cat_id = {c.name: c.id for c in taxonomy}
    instances = []
    for src, hidden in (("a", hidden_a), ("b", hidden_b)):
        names = {c.id: c.name for c in hidden.categories}
        for inst in hidden.instances:
            instances.append(Instance(
                id=len(instances) + 1,
                image_id=merged.image_remap[(src, inst.image_id)],
                category_id=cat_id[names[inst.category_id]],
                box=inst.box,
            ))
    return Dataset(merged.dataset.images, taxonomy, tuple(instances))


def _variant_dataset(merged: Dataset, variant: str) -> Dataset:
    """The training target set a variant would see."""
    if variant != "hard":
        return merged
    instances = tuple(
        replace(i, provenance=Provenance(ProvenanceKind.SAFE_PREDICTION, i.provenance.score))
        if i.provenance.kind is ProvenanceKind.UNSAFE_PREDICTION else i
        for i in merged.instances
    )
    return Dataset(merged.images, merged.categories, instances)


def _enrichment_quality(target_set: Dataset, hidden: Dataset, match_iou: float = 0.5) -> dict:
    """Precision/recall of the non-GT additions against hidden truth, over the
    categories where additions were possible."""
    # only trusted additions count: unsafe instances are never training targets
    added = [i for i in target_set.instances
             if i.provenance.kind is ProvenanceKind.SAFE_PREDICTION]
    covered_by_gt = {
        (i.image_id, i.category_id)
        for i in target_set.instances
        if i.provenance.kind is ProvenanceKind.GROUND_TRUTH
    }
    # hidden instances lacking human labels on their image: the pool the
    # additions were supposed to recover
    pool = [
        h for h in hidden.instances
        if (h.image_id, h.category_id) not in covered_by_gt
    ]
    matched_pool: set[int] = set()
    n_correct = 0
    for inst in added:
        best, best_iou = None, 0.0
        for h in pool:
            if h.id in matched_pool or h.image_id != inst.image_id or h.category_id != inst.category_id:
                continue
            v = iou(inst.box, h.box)
            if v > best_iou:
                best, best_iou = h, v
        if best is not None and best_iou >= match_iou:
            matched_pool.add(best.id)
            n_correct += 1
    precision = 100.0 * n_correct / len(added) if added else None
    recall = 100.0 * len(matched_pool) / len(pool) if pool else None
    return {
        "added": len(added),
        "correct": n_correct,
        "pool": len(pool),
        "precision": precision,
        "recall": recall,
    }


def _anchor_grid(image: ImageInfo, stride: int = 32, sizes: tuple[float, ...] = (24.0, 48.0, 96.0)) -> list[Box]:
    boxes = []
    xs = np.arange(stride / 2, image.width, stride)
    ys = np.arange(stride / 2, image.height, stride)
    for cy in ys:
        for cx in xs:
            for s in sizes:
                x1 = max(0.0, cx - s / 2)
                y1 = max(0.0, cy - s / 2)
                x2 = min(image.width, cx + s / 2)
                y2 = min(image.height, cy + s / 2)
                if x2 - x1 > 1 and y2 - y1 > 1:
                    boxes.append(Box(x1, y1, x2 - x1, y2 - y1))
    return boxes


def _assignment_stats(target_set: Dataset, cfg: AssignConfig, n_probe_images: int = 20) -> dict:
    """Anchor/ROI label counts over a probe subsample of images."""
    counts = {"positive": 0, "negative": 0, "undefined": 0}
    roi_counts = {"foreground": 0, "background": 0, "unsafe_matched": 0}
    by_image = target_set.instances_by_image()
    n_cats = len(target_set.categories)
    for im in target_set.images[:n_probe_images]:
        anchors = _anchor_grid(im)
        instances = by_image[im.id]
        for label in assign_anchors(anchors, instances, cfg):
            counts[label.value] += 1
        for t in assign_rois(anchors, instances, cfg, n_categories=n_cats):
            if t.is_unsafe_matched:
                roi_counts["unsafe_matched"] += 1
            elif t.is_positive:
                roi_counts["foreground"] += 1
            else:
                roi_counts["background"] += 1
    return {"anchors": counts, "rois": roi_counts}


def _loss_probe(target_set: Dataset, cfg: AssignConfig, seed: int, variant: str) -> dict:
    """SoftSig loss components on a fixed random logit matrix over one sampled
    ROI batch from the first probe image."""
    im = target_set.images[0]
    anchors = _anchor_grid(im)
    instances = target_set.instances_by_image()[im.id]
    n_cats = len(target_set.categories)
    var_cfg = replace(cfg, unsafe_sampling="excluded" if variant == "discard" else "pooled")
    targets = assign_rois(anchors, instances, var_cfg, n_categories=n_cats)
    chosen = sample_roi_batch(targets, var_cfg, image_id=im.id)
    batch_targets = [targets[i] for i in chosen]
    rng = np.random.default_rng([seed, 777])
    logits = rng.normal(0.0, 1.0, size=(len(batch_targets), n_cats + 1))
    batch = batch_from_targets(batch_targets, logits)
    return {
        "categorical": categorical_loss(batch),
        "binary": binary_loss(batch),
        "softsig": softsig_loss(batch),
        "batch_size": len(batch_targets),
        "unsafe_in_batch": sum(1 for t in batch_targets if t.is_unsafe_matched),
    }


def _run_arms(
    hidden_a: Dataset,
    hidden_b: Dataset,
    dataset_a: Dataset,
    dataset_b: Dataset,
    det_on_a: DetectionSet,
    det_on_b: DetectionSet,
    exp: ExperimentConfig,
    selection: SelectionConfig,
) -> dict:
    """Enrich + merge once, then score every requested variant."""
    taxonomy = build_taxonomy(list(dataset_a.categories), list(dataset_b.categories))
    enriched_a, sel_a = enrich(dataset_a, det_on_a, taxonomy, selection, "a")
    enriched_b, sel_b = enrich(dataset_b, det_on_b, taxonomy, selection, "b")
    merged = merge(enriched_a, enriched_b)

    empty: DetectionSet = ()
    naive_a, _ = enrich(dataset_a, empty, taxonomy, selection, "a")
    naive_b, _ = enrich(dataset_b, empty, taxonomy, selection, "b")
    merged_naive = merge(naive_a, naive_b)

    hidden_eval = _hidden_merged(hidden_a, hidden_b, merged)

    arms = {}
    for variant in exp.variants:
        if variant == "naive":
            target_set = merged_naive.dataset
        else:
            target_set = _variant_dataset(merged.dataset, variant)
        dets = _as_detections(target_set)
        report = evaluate(dets, hidden_eval)
        assign_cfg = replace(
            exp.assign, unsafe_sampling="excluded" if variant == "discard" else "pooled")
        arms[variant] = {
            "eval": report.to_dict(),
            "enrichment": _enrichment_quality(target_set, hidden_eval),
            "assignment": _assignment_stats(target_set, assign_cfg),
            "loss_probe": _loss_probe(target_set, assign_cfg, exp.seed, variant),
        }
    return {
        "arms": arms,
        "selection": {"a": sel_a.stats(), "b": sel_b.stats()},
        "sampling_weights": {"a": merged.weight_a, "b": merged.weight_b},
        "merged": merged,
        "hidden_eval": hidden_eval,
    }


def run_experiment(exp: ExperimentConfig) -> dict:
    """Full synthetic experiment: hidden truth, partial datasets, simulated
    cross-detections, every ablation arm, optional threshold sweep and
    iterative rounds. Output is a JSON-ready report."""
    scene_a = replace(exp.scene, n_images=exp.scene.n_images // 2,
                      domain_tag="domain_a", seed=exp.scene.seed)
    scene_b = replace(exp.scene, n_images=exp.scene.n_images - exp.scene.n_images // 2,
                      domain_tag="domain_b", seed=exp.scene.seed + 1)
    hidden_a = generate_scenes(scene_a)
    hidden_b = generate_scenes(scene_b, id_offset=scene_a.n_images)
    dataset_a = keep_categories(hidden_a, set(exp.names_a))
    dataset_b = keep_categories(hidden_b, set(exp.names_b))

    # detector trained on B predicts B's categories on A's images, and vice
    # versa; domain tags make those cross-domain predictions degraded
    model_a = replace(exp.detector_a, domain_tag="domain_a")
    model_b = replace(exp.detector_b, domain_tag="domain_b")
    det_on_a = simulate_detector(hidden_a, model_b, list(dataset_b.categories))
    det_on_b = simulate_detector(hidden_b, model_a, list(dataset_a.categories))

    base = _run_arms(hidden_a, hidden_b, dataset_a, dataset_b,
                     det_on_a, det_on_b, exp, exp.selection)

    report = {
        "seed": exp.seed,
        "config": {
            "n_images": exp.scene.n_images,
            "taxonomy": list(exp.scene.taxonomy),
            "names_a": list(exp.names_a),
            "names_b": list(exp.names_b),
            "threshold_low": exp.selection.threshold_low,
            "threshold_high": exp.selection.threshold_high,
            "dedup_iou": exp.selection.dedup_iou,
            "rounds": exp.rounds,
            "variants": list(exp.variants),
        },
        "arms": base["arms"],
        "selection": base["selection"],
        "sampling_weights": base["sampling_weights"],
    }

    if exp.threshold_sweep:
        rows = []
        for high in exp.threshold_sweep:
            sel = replace(exp.selection, threshold_high=high)
            swept = _run_arms(hidden_a, hidden_b, dataset_a, dataset_b,
                              det_on_a, det_on_b, exp, sel)
            rows.append({
                "threshold_high": high,
                "map": {v: swept["arms"][v]["eval"]["mAP"] for v in exp.variants},
            })
        report["sweep"] = rows

    if exp.rounds > 1:
        rounds = [_round_summary(1, base)]
        for round_index in range(2, exp.rounds + 1):
            # the round-k model trained on the merged data sees both domains,
            # so the cross-domain degradation disappears; detector seeds are
            # kept so the emitted detections form a superset of round 1's
            model_a_k = replace(model_a, degradation=1.0)
            model_b_k = replace(model_b, degradation=1.0)
            det_on_a_k = simulate_detector(hidden_a, model_b_k, list(dataset_b.categories))
            det_on_b_k = simulate_detector(hidden_b, model_a_k, list(dataset_a.categories))
            result = _run_arms(hidden_a, hidden_b, dataset_a, dataset_b,
                               det_on_a_k, det_on_b_k, exp, exp.selection)
            rounds.append(_round_summary(round_index, result))
        report["rounds"] = rounds

    return report


def _round_summary(round_index: int, result: dict) -> dict:
    softsig = result["arms"].get("softsig") or next(iter(result["arms"].values()))
    return {
        "round": round_index,
        "selection": result["selection"],
        "enrichment": softsig["enrichment"],
        "map": {v: arm["eval"]["mAP"] for v, arm in result["arms"].items()},
    }
