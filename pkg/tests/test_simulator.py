"""Synthetic scene and detector tests."""

from __future__ import annotations

from dataclasses import replace

import pytest

from omnia.annotations import iou, serialize_dataset, validate
from omnia.errors import ConfigError
from omnia.simulator import (
    DetectorModel,
    ExperimentConfig,
    SceneConfig,
    generate_scenes,
    keep_categories,
    run_experiment,
    simulate_detector,
    strip_categories,
)

SMALL = SceneConfig(n_images=12, seed=3)


def test_scene_generation_is_deterministic():
    a = generate_scenes(SMALL)
    b = generate_scenes(SMALL)
    assert serialize_dataset(a) == serialize_dataset(b)
    c = generate_scenes(replace(SMALL, seed=4))
    assert serialize_dataset(a) != serialize_dataset(c)


def test_scenes_validate_clean_and_respect_overlap_cap():
    ds = generate_scenes(SMALL)
    assert validate(ds) == []
    by_image = ds.instances_by_image()
    for insts in by_image.values():
        for i in range(len(insts)):
            for j in range(i + 1, len(insts)):
                assert iou(insts[i].box, insts[j].box) <= SMALL.overlap_cap + 1e-12


def test_scene_object_count_bounds():
    ds = generate_scenes(SMALL)
    for insts in ds.instances_by_image().values():
        assert SMALL.objects_min <= len(insts) <= SMALL.objects_max


def test_zero_images_gives_empty_dataset():
    ds = generate_scenes(replace(SMALL, n_images=0))
    assert ds.images == () and ds.instances == ()


def test_id_offset_shifts_image_ids():
    ds = generate_scenes(replace(SMALL, n_images=3), id_offset=100)
    assert [im.id for im in ds.images] == [101, 102, 103]


def test_bad_scene_config():
    with pytest.raises(ConfigError):
        SceneConfig(objects_min=5, objects_max=2)
    with pytest.raises(ConfigError):
        SceneConfig(taxonomy=())
    with pytest.raises(ConfigError):
        SceneConfig(overlap_cap=1.0)


def test_strip_and_keep_categories():
    ds = generate_scenes(SMALL)
    stripped = strip_categories(ds, {"bag", "CAR"})
    names = {c.name for c in stripped.categories}
    assert names == {"dress", "hydrant", "shoe", "truck"}
    remaining_ids = {c.id for c in stripped.categories}
    assert all(i.category_id in remaining_ids for i in stripped.instances)
    kept = keep_categories(ds, {"bag", "car"})
    assert {c.name for c in kept.categories} == {"bag", "car"}
    total = len(stripped.instances) + len(kept.instances)
    assert total == len(ds.instances)


def test_detector_is_deterministic():
    ds = generate_scenes(SMALL)
    model = DetectorModel(seed=11, domain_tag=SMALL.domain_tag)
    d1 = simulate_detector(ds, model, list(ds.categories))
    d2 = simulate_detector(ds, model, list(ds.categories))
    assert d1 == d2


def test_detector_empirical_recall():
    cfg = SceneConfig(n_images=250, seed=3)
    ds = generate_scenes(cfg)
    model = DetectorModel(recall=0.85, fp_per_image=0.0, seed=11,
                          domain_tag=cfg.domain_tag)
    dets = simulate_detector(ds, model, list(ds.categories))
    emitted = len(dets) / len(ds.instances)
    assert emitted == pytest.approx(0.85, abs=0.03)


def test_detector_degradation_yields_subset():
    ds = generate_scenes(replace(SMALL, n_images=40, domain_tag="other"))
    full = DetectorModel(seed=11, degradation=1.0, domain_tag="mine")
    degraded = replace(full, degradation=0.6)
    d_full = simulate_detector(ds, full, list(ds.categories))
    d_deg = simulate_detector(ds, degraded, list(ds.categories))
    assert set(d_deg) <= set(d_full)
    assert len(d_deg) < len(d_full)


def test_oracle_detector_is_perfect():
    ds = generate_scenes(SMALL)
    oracle = DetectorModel(
        recall=1.0, jitter_sigma=0.0, jitter_outlier_prob=0.0,
        score_noise_sigma=0.0, fp_per_image=0.0, seed=11,
        domain_tag=SMALL.domain_tag,
    )
    dets = simulate_detector(ds, oracle, list(ds.categories))
    assert len(dets) == len(ds.instances)
    by_image = ds.instances_by_image()
    for d in dets:
        best = max(iou(d.box, g.box) for g in by_image[d.image_id])
        assert best == pytest.approx(1.0, abs=1e-12)  # clamp may re-round w/h
        assert d.score == 1.0


def test_experiment_report_shape_and_determinism():
    exp = ExperimentConfig(scene=SceneConfig(n_images=16, seed=3))
    r1 = run_experiment(exp)
    r2 = run_experiment(exp)
    assert r1 == r2
    assert set(r1["config"]["taxonomy"]) >= set(r1["config"]["names_a"])
    for variant in exp.variants:
        arm = r1["arms"][variant]
        assert {"eval", "enrichment", "assignment", "loss_probe"} <= set(arm)
        assert 0.0 <= arm["eval"]["mAP"] <= 100.0


def test_overlapping_splits_require_gt_only_policy():
    with pytest.raises(ConfigError):
        ExperimentConfig(
            names_a=("bag", "car", "dress"),
            names_b=("dress", "hydrant", "shoe"),
            shared_policy="duplicate",
        )
