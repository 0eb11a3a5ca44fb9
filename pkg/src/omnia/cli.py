"""Command-line interface: merge, select, assign, eval, gradcheck, simulate,
iterate."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import report as reporting
from .annotations import parse_dataset, parse_detections, serialize_dataset
from .assignment import AssignConfig, assign_anchors, assign_rois, assignment_dump
from .errors import OmniaError
from .gradcheck import central_difference_gradient, max_relative_error, random_batch
from .merging import build_taxonomy, enrich, merge
from .metrics import evaluate
from .selection import SelectionConfig, select
from .simulator import (
    DetectorModel,
    ExperimentConfig,
    SceneConfig,
    _anchor_grid,
    run_experiment,
)
from .softsig import softsig_gradient

log = logging.getLogger("omnia")


def _setup_logging() -> None:
    level = os.environ.get("OMNIA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _fail(exc: Exception, code: int = 2) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    sys.exit(code)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        _fail(exc)


def _load_toml(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        _fail(exc)


def _build(cls, raw: dict):
    """Instantiate a config dataclass from a TOML table, rejecting unknown keys."""
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - fields
    if unknown:
        _fail(OmniaError(f"unknown {cls.__name__} keys: {sorted(unknown)}"))
    coerced = {
        k: tuple(v) if isinstance(v, list) else v
        for k, v in raw.items()
    }
    return cls(**coerced)


def _selection_config(cfg: dict) -> SelectionConfig:
    raw = dict(cfg.get("selection", {}))
    overrides = {name: tuple(pair) for name, pair in raw.pop("overrides", {}).items()}
    return _build(SelectionConfig, {**raw, "overrides": overrides}) if raw or overrides else SelectionConfig(overrides=overrides)


def _experiment_config(cfg: dict, seed: int) -> ExperimentConfig:
    kwargs = {"seed": seed}
    if "scene" in cfg:
        kwargs["scene"] = _build(SceneConfig, {**cfg["scene"], "seed": cfg["scene"].get("seed", seed)})
    if "detector_a" in cfg:
        kwargs["detector_a"] = _build(DetectorModel, cfg["detector_a"])
    if "detector_b" in cfg:
        kwargs["detector_b"] = _build(DetectorModel, cfg["detector_b"])
    kwargs["selection"] = _selection_config(cfg)
    if "assign" in cfg:
        kwargs["assign"] = _build(AssignConfig, cfg["assign"])
    exp = dict(cfg.get("experiment", {}))
    for key in ("names_a", "names_b", "variants", "threshold_sweep"):
        if key in exp:
            kwargs[key] = tuple(exp[key])
    for key in ("rounds", "shared_policy"):
        if key in exp:
            kwargs[key] = exp[key]
    return ExperimentConfig(**kwargs)


@click.group()
@click.option("--seed", default=3, show_default=True, help="Master seed echoed in every report.")
@click.pass_context
def main(ctx: click.Context, seed: int) -> None:
    """Dataset merging with soft distillation: selection, merging, anchor/ROI
    assignment, SoftSig loss checks, detection metrics and the synthetic
    experiment harness."""
    _setup_logging()
    ctx.obj = {"seed": seed}


@main.command("select")
@click.option("--dets", "dets_path", required=True, type=str)
@click.option("--gt", "gt_path", required=True, type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--stats", "stats_path", type=str, default=None)
def select_cmd(dets_path: str, gt_path: str, config_path: str | None, stats_path: str | None) -> None:
    """Partition a detection file into safe/unsafe/discarded against a
    ground-truth annotation file."""
    try:
        gt = parse_dataset(_read(gt_path))
        dets = parse_detections(_read(dets_path))
        cfg = _selection_config(_load_toml(config_path))
        result = select(dets, gt.instances_by_image(), cfg, categories=list(gt.categories))
    except OmniaError as exc:
        _fail(exc)
    stats = result.stats()
    if stats_path:
        reporting.write_json(Path(stats_path), stats)
    click.echo(json.dumps(stats, sort_keys=True))


@main.command("merge")
@click.option("--a", "a_path", required=True, type=str)
@click.option("--b", "b_path", required=True, type=str)
@click.option("--det-on-a", "det_on_a_path", required=True, type=str)
@click.option("--det-on-b", "det_on_b_path", required=True, type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", "out_path", required=True, type=str)
@click.option("--stats", "stats_path", type=str, default=None)
def merge_cmd(a_path, b_path, det_on_a_path, det_on_b_path, config_path, out_path, stats_path) -> None:
    """Enrich two annotation files with each other's detections and merge
    them over the union taxonomy."""
    try:
        dataset_a = parse_dataset(_read(a_path))
        dataset_b = parse_dataset(_read(b_path))
        det_on_a = parse_detections(_read(det_on_a_path))
        det_on_b = parse_detections(_read(det_on_b_path))
        cfg = _selection_config(_load_toml(config_path))
        taxonomy = build_taxonomy(list(dataset_a.categories), list(dataset_b.categories))
        enriched_a, sel_a = enrich(dataset_a, det_on_a, taxonomy, cfg, "a")
        enriched_b, sel_b = enrich(dataset_b, det_on_b, taxonomy, cfg, "b")
        merged = merge(enriched_a, enriched_b)
    except OmniaError as exc:
        _fail(exc)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(serialize_dataset(merged.dataset) + "\n")
    stats = {
        "selection": {"a": sel_a.stats(), "b": sel_b.stats()},
        "sampling_weights": {"a": merged.weight_a, "b": merged.weight_b},
        "images": len(merged.dataset.images),
        "instances": len(merged.dataset.instances),
        "categories": len(merged.dataset.categories),
    }
    if stats_path:
        reporting.write_json(Path(stats_path), stats)
    click.echo(json.dumps(stats, sort_keys=True))


@main.command("assign")
@click.option("--gt", "gt_path", required=True, type=str)
@click.option("--image", "image_id", type=int, default=None, help="Restrict to one image id.")
@click.option("--out", "out_path", required=True, type=str)
@click.pass_context
def assign_cmd(ctx: click.Context, gt_path: str, image_id: int | None, out_path: str) -> None:
    """Dump anchor labels and ROI targets (with loss masks) per image."""
    try:
        dataset = parse_dataset(_read(gt_path))
        cfg = AssignConfig(seed=ctx.obj["seed"])
        by_image = dataset.instances_by_image()
        dump = {}
        for im in dataset.images:
            if image_id is not None and im.id != image_id:
                continue
            anchors = _anchor_grid(im)
            labels = assign_anchors(anchors, by_image[im.id], cfg)
            targets = assign_rois(anchors, by_image[im.id], cfg,
                                  n_categories=len(dataset.categories))
            dump[str(im.id)] = assignment_dump(anchors, labels, anchors, targets)
    except OmniaError as exc:
        _fail(exc)
    reporting.write_json(Path(out_path), {"seed": ctx.obj["seed"], "images": dump})
    click.echo(f"wrote assignment dump for {len(dump)} image(s) to {out_path}")


@main.command("eval")
@click.option("--dets", "dets_path", required=True, type=str)
@click.option("--gt", "gt_path", required=True, type=str)
@click.option("--iou", "iou_thresh", default=0.5, show_default=True)
@click.option("--out", "out_path", required=True, type=str)
@click.pass_context
def eval_cmd(ctx: click.Context, dets_path: str, gt_path: str, iou_thresh: float, out_path: str) -> None:
    """Evaluate a detection file against ground truth: per-category AP/oLRP,
    mAP and MoLRP, with a CSV table and a figure next to the JSON report."""
    try:
        gt = parse_dataset(_read(gt_path))
        dets = parse_detections(_read(dets_path))
        report = evaluate(dets, gt, iou_thresh)
    except OmniaError as exc:
        _fail(exc)
    out = Path(out_path)
    payload = {"seed": ctx.obj["seed"], "iou_threshold": iou_thresh, **report.to_dict()}
    reporting.write_json(out, payload)
    reporting.write_eval_csv(out.with_suffix(".csv"), report.to_dict())
    reporting.plot_eval(out.with_suffix(".png"), report.to_dict())
    click.echo(json.dumps({"mAP": report.map, "MoLRP": report.molrp}, sort_keys=True))


@main.command("gradcheck")
@click.option("--seed", "seed", default=None, type=int, help="Defaults to the global seed.")
@click.option("--trials", default=100, show_default=True)
@click.option("--tolerance", default=1e-5, show_default=True)
@click.pass_context
def gradcheck_cmd(ctx: click.Context, seed: int | None, trials: int, tolerance: float) -> None:
    """Compare the analytic loss gradient against central finite differences
    on random batches; nonzero exit above tolerance."""
    rng = np.random.default_rng(ctx.obj["seed"] if seed is None else seed)
    worst = 0.0
    for _ in range(trials):
        batch = random_batch(rng)
        err = max_relative_error(softsig_gradient(batch), central_difference_gradient(batch))
        worst = max(worst, err)
    click.echo(f"max relative error over {trials} trials: {worst:.3e}")
    if worst >= tolerance:
        _fail(OmniaError(f"gradient check failed: {worst:.3e} >= {tolerance:.1e}"), code=1)


@main.command("simulate")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", "out_path", required=True, type=str)
@click.pass_context
def simulate_cmd(ctx: click.Context, config_path: str | None, out_path: str) -> None:
    """Run the synthetic end-to-end experiment and write the report plus CSV
    and figures."""
    try:
        exp = _experiment_config(_load_toml(config_path), ctx.obj["seed"])
        report = run_experiment(exp)
    except OmniaError as exc:
        _fail(exc)
    out = Path(out_path)
    reporting.write_json(out, report)
    reporting.write_experiment_csv(out.with_suffix(".csv"), report)
    reporting.plot_experiment(out.with_suffix(".png"), report)
    if report.get("sweep"):
        reporting.plot_sweep(out.with_name(out.stem + "_sweep.png"), report["sweep"])
    click.echo(json.dumps(
        {arm: payload["eval"]["mAP"] for arm, payload in report["arms"].items()}, sort_keys=True))


@main.command("iterate")
@click.option("--config", "config_path", type=str, default=None)
@click.option("--rounds", default=2, show_default=True)
@click.option("--out", "out_path", required=True, type=str)
@click.pass_context
def iterate_cmd(ctx: click.Context, config_path: str | None, rounds: int, out_path: str) -> None:
    """Run the synthetic experiment iteratively, feeding each round's merged
    model back in as the detection source."""
    try:
        exp = _experiment_config(_load_toml(config_path), ctx.obj["seed"])
        exp = dataclasses.replace(exp, rounds=max(rounds, exp.rounds))
        report = run_experiment(exp)
    except OmniaError as exc:
        _fail(exc)
    out = Path(out_path)
    reporting.write_json(out, report)
    reporting.write_experiment_csv(out.with_suffix(".csv"), report)
    rows = report.get("rounds", [])
    click.echo(json.dumps(
        [{"round": r["round"], "recall": r["enrichment"]["recall"]} for r in rows], sort_keys=True))


if __name__ == "__main__":
    main()
