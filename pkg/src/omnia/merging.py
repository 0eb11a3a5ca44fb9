"""Union taxonomy construction, dataset enrichment with selected predictions,
merging with balanced sampling weights, and the iterative variant."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from .annotations import (
    Category,
    Dataset,
    Detection,
    DetectionSet,
    canonical_name,
    validate,
)
from .errors import ConfigError, IntegrityError, TaxonomyMismatchError
from .selection import SelectionConfig, SelectionResult, select


@dataclass(frozen=True)
class MergedTaxonomy:
    categories: tuple[Category, ...]
    remap_a: dict[int, int]  # old id in taxonomy A -> merged id
    remap_b: dict[int, int]
    shared: frozenset[str]

    def remap_for(self, source_tag: str) -> dict[int, int]:
        if source_tag == "a":
            return self.remap_a
        if source_tag == "b":
            return self.remap_b
        raise ConfigError(f"source_tag must be 'a' or 'b', got {source_tag!r}")


@dataclass(frozen=True)
class EnrichedDataset:
    dataset: Dataset
    source_tag: str
    sampling_weight: float = 1.0


@dataclass(frozen=True)
class MergeResult:
    dataset: Dataset
    weight_a: float
    weight_b: float
    # merged image id -> source tag, for weighted sampling downstream
    image_sources: dict[int, str]
    # (source tag, original image id) -> merged image id
    image_remap: dict[tuple[str, int], int]


def build_taxonomy(cats_a: list[Category], cats_b: list[Category]) -> MergedTaxonomy:
    """Union of two taxonomies by canonical name, with dense deterministic ids
    assigned in sorted-name order."""
    names_a = {canonical_name(c.name) for c in cats_a}
    names_b = {canonical_name(c.name) for c in cats_b}
    merged_names = sorted(names_a | names_b)
    new_id = {name: i + 1 for i, name in enumerate(merged_names)}
    categories = tuple(Category(new_id[n], n) for n in merged_names)
    remap_a = {c.id: new_id[canonical_name(c.name)] for c in cats_a}
    remap_b = {c.id: new_id[canonical_name(c.name)] for c in cats_b}
    return MergedTaxonomy(categories, remap_a, remap_b, frozenset(names_a & names_b))


def enrich(
    dataset: Dataset,
    complementary_detections: DetectionSet,
    taxonomy: MergedTaxonomy,
    cfg: SelectionConfig,
    source_tag: str,
) -> tuple[EnrichedDataset, SelectionResult]:
    """Augment a dataset's ground truth with selected predictions from the
    complementary detector.

    Detections arrive in the complementary taxonomy's ids. Only categories the
    dataset does not label itself are eligible; shared categories keep human
    labels only. Ground-truth instances pass through box-exact, with category
    ids remapped into the merged taxonomy.
    """
    own_remap = taxonomy.remap_for(source_tag)
    other_remap = taxonomy.remap_for("b" if source_tag == "a" else "a")
    own_names = dataset.category_names()

    for old_id in (c.id for c in dataset.categories):
        if old_id not in own_remap:
            raise IntegrityError(f"category id {old_id} missing from taxonomy remap for '{source_tag}'")

    gt_instances = tuple(
        replace(inst, category_id=own_remap[inst.category_id]) for inst in dataset.instances
    )
    merged_name = {c.id: c.name for c in taxonomy.categories}

    eligible = []
    for det in complementary_detections:
        if det.category_id not in other_remap:
            raise IntegrityError(f"detection category id {det.category_id} not in complementary taxonomy")
        merged_id = other_remap[det.category_id]
        if merged_name[merged_id] in own_names:
            continue  # shared or own category: human labels only
        eligible.append(replace(det, category_id=merged_id))

    gt_by_image = {im.id: [] for im in dataset.images}
    for inst in gt_instances:
        gt_by_image[inst.image_id].append(inst)

    next_id = max((i.id for i in dataset.instances), default=0) + 1
    result = select(tuple(eligible), gt_by_image, cfg,
                    categories=list(taxonomy.categories), first_instance_id=next_id)

    enriched = Dataset(
        images=dataset.images,
        categories=taxonomy.categories,
        instances=gt_instances + result.safe + result.unsafe,
    )
    problems = validate(enriched)
    if problems:
        raise IntegrityError("enriched dataset invalid: " + "; ".join(problems))
    return EnrichedDataset(enriched, source_tag), result


def merge(a: EnrichedDataset, b: EnrichedDataset) -> MergeResult:
    """Concatenate two enriched datasets with dense re-iding and per-source
    sampling weights that balance expected image draws."""
    if a.dataset.categories != b.dataset.categories:
        raise TaxonomyMismatchError("enriched datasets disagree on the merged taxonomy")

    images = []
    image_sources: dict[int, str] = {}
    image_remap: dict[tuple[str, int], int] = {}
    for src, enriched in (("a", a), ("b", b)):
        for im in enriched.dataset.images:
            new_id = len(images) + 1
            image_remap[(src, im.id)] = new_id
            images.append(replace(im, id=new_id))
            image_sources[new_id] = src

    instances = []
    for src, enriched in (("a", a), ("b", b)):
        for inst in enriched.dataset.instances:
            instances.append(replace(
                inst, id=len(instances) + 1, image_id=image_remap[(src, inst.image_id)]))

    n_a, n_b = len(a.dataset.images), len(b.dataset.images)
    larger = max(n_a, n_b)
    weight_a = larger / n_a if n_a else 1.0
    weight_b = larger / n_b if n_b else 1.0
    merged = Dataset(tuple(images), a.dataset.categories, tuple(instances))
    return MergeResult(merged, weight_a, weight_b, image_sources, image_remap)


# Produces the detection pairs for one round: (detections on A's images in
# B's taxonomy, detections on B's images in A's taxonomy). Round 1 receives
# previous=None; later rounds receive the previous round's merge.
DetectionSource = Callable[[int, "RoundResult | None"], tuple[DetectionSet, DetectionSet]]


@dataclass(frozen=True)
class RoundResult:
    round_index: int
    merged: MergeResult
    enriched_a: EnrichedDataset
    enriched_b: EnrichedDataset
    selection_a: SelectionResult
    selection_b: SelectionResult


def iterate(
    dataset_a: Dataset,
    dataset_b: Dataset,
    detection_source: DetectionSource,
    rounds: int,
    cfg: SelectionConfig,
) -> list[RoundResult]:
    """Run the enrich/merge cycle ``rounds`` times, feeding each round's merge
    back to the detection source. Selection uses the same config every round."""
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    taxonomy = build_taxonomy(list(dataset_a.categories), list(dataset_b.categories))
    results: list[RoundResult] = []
    previous: RoundResult | None = None
    for round_index in range(1, rounds + 1):
        det_on_a, det_on_b = detection_source(round_index, previous)
        enriched_a, sel_a = enrich(dataset_a, det_on_a, taxonomy, cfg, "a")
        enriched_b, sel_b = enrich(dataset_b, det_on_b, taxonomy, cfg, "b")
        merged = merge(enriched_a, enriched_b)
        previous = RoundResult(round_index, merged, enriched_a, enriched_b, sel_a, sel_b)
        results.append(previous)
    return results
