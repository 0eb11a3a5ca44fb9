"""Report rendering: delimited summaries and matplotlib figures written
alongside the JSON reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_eval_csv(path: Path, eval_report: dict) -> None:
    """Per-category AP/oLRP table, one row per category plus the aggregate."""
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "AP", "oLRP", "gt", "tp", "fp", "fn"])
        for name, rep in sorted(eval_report["per_category"].items()):
            counts = rep["counts"]
            writer.writerow([name, f"{rep['AP']:.4f}",
                             "" if rep["oLRP"] is None else f"{rep['oLRP']:.4f}",
                             counts["gt"], counts["tp"], counts["fp"], counts["fn"]])
        writer.writerow(["__mean__", f"{eval_report['mAP']:.4f}", f"{eval_report['MoLRP']:.4f}",
                         "", "", "", ""])


def plot_eval(path: Path, eval_report: dict, title: str = "Per-category AP / oLRP") -> None:
    names = sorted(eval_report["per_category"])
    aps = [eval_report["per_category"][n]["AP"] for n in names]
    olrps = [eval_report["per_category"][n]["oLRP"] or 0.0 for n in names]
    x = range(len(names))
    fig, ax = plt.subplots(figsize=(max(6, len(names) * 0.8), 4))
    ax.bar([i - 0.2 for i in x], aps, width=0.4, label="AP@0.5")
    ax.bar([i + 0.2 for i in x], olrps, width=0.4, label="oLRP")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("percent")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "omnia"})
    plt.close(fig)


def write_experiment_csv(path: Path, report: dict) -> None:
    """One row per ablation arm with the headline numbers."""
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "mAP", "MoLRP", "added", "enrich_precision", "enrich_recall"])
        for arm, payload in report["arms"].items():
            enrich = payload["enrichment"]
            writer.writerow([
                arm,
                f"{payload['eval']['mAP']:.4f}",
                f"{payload['eval']['MoLRP']:.4f}",
                enrich["added"],
                "" if enrich["precision"] is None else f"{enrich['precision']:.4f}",
                "" if enrich["recall"] is None else f"{enrich['recall']:.4f}",
            ])


def plot_experiment(path: Path, report: dict) -> None:
    arms = list(report["arms"])
    maps = [report["arms"][a]["eval"]["mAP"] for a in arms]
    molrps = [report["arms"][a]["eval"]["MoLRP"] for a in arms]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = range(len(arms))
    ax.bar([i - 0.2 for i in x], maps, width=0.4, label="mAP@0.5")
    ax.bar([i + 0.2 for i in x], molrps, width=0.4, label="MoLRP")
    ax.set_xticks(list(x))
    ax.set_xticklabels(arms)
    ax.set_ylabel("percent")
    ax.set_title("Enriched-target quality per ablation arm")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "omnia"})
    plt.close(fig)


def plot_sweep(path: Path, sweep: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    thresholds = [row["threshold_high"] for row in sweep]
    arms = sorted(sweep[0]["map"])
    for arm in arms:
        ax.plot(thresholds, [row["map"][arm] for row in sweep], marker="o", label=arm)
    ax.set_xlabel("threshold_high")
    ax.set_ylabel("mAP@0.5")
    ax.set_title("Safe-prediction threshold impact")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "omnia"})
    plt.close(fig)
