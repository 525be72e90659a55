"""Aggregation of run metrics into a table plus static summary plots."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from powerpm.downstream.tasks import KNOWN_METRICS

_PRIMARY_METRIC = {
    "forecast": "MSE",
    "impute": "MSE",
    "anomaly": "F0.5",
    "classify": "accuracy",
}


def read_run(path: str | Path) -> dict:
    with open(path) as fh:
        run = json.load(fh)
    for key in ("task", "metrics"):
        if key not in run:
            raise ValueError(f"{path}: metrics file missing {key!r}")
    return run


def run_detail(task: dict) -> str:
    if task.get("horizon") is not None:
        return str(task["horizon"])
    if task.get("mask_ratio") is not None:
        return str(task["mask_ratio"])
    return str(task.get("n_classes", ""))


def aggregate_runs(metric_files: list[str | Path]) -> list[dict]:
    """One flat row per run, with a column per known metric."""
    rows = []
    for path in metric_files:
        run = read_run(path)
        task = run["task"]
        row = {
            "variant": run.get("variant", "full"),
            "family": task["family"],
            "detail": run_detail(task),
            "regime": task.get("regime", "full_ft"),
            "fraction": run.get("fraction", task.get("data_fraction", 1.0)),
            "seed": run.get("seed", ""),
        }
        for metric in KNOWN_METRICS:
            row[metric] = run["metrics"].get(metric, "")
        rows.append(row)
    return rows


def write_aggregate(rows: list[dict], path: str | Path) -> None:
    fieldnames = ["variant", "family", "detail", "regime", "fraction", "seed"]
    fieldnames += list(KNOWN_METRICS)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_loss_curves(trace_files: list[str | Path], out_path: str | Path) -> bool:
    if not trace_files:
        return False
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for trace_path in trace_files:
        steps, l_mse, l_dvcl = [], [], []
        with open(trace_path) as fh:
            for row in csv.DictReader(fh):
                steps.append(int(row["step"]))
                l_mse.append(float(row["l_mse"]))
                l_dvcl.append(float(row["l_dvcl"]))
        stem = Path(trace_path).stem
        ax.plot(steps, l_mse, label=f"{stem} reconstruction")
        if any(v != 0.0 for v in l_dvcl):
            ax.plot(steps, l_dvcl, linestyle="--", label=f"{stem} contrastive")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Software": "powerpm"})
    plt.close(fig)
    return True


def plot_metric_vs_horizon(rows: list[dict], out_path: str | Path) -> bool:
    forecast = [r for r in rows if r["family"] == "forecast" and r["MSE"] != ""]
    if len({r["detail"] for r in forecast}) < 2:
        return False
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    variants = sorted({r["variant"] for r in forecast})
    for variant in variants:
        pts = sorted(
            (int(r["detail"]), float(r["MSE"])) for r in forecast if r["variant"] == variant
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=variant)
    ax.set_xlabel("forecast horizon (points)")
    ax.set_ylabel("MSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Software": "powerpm"})
    plt.close(fig)
    return True


def plot_ablation_bars(rows: list[dict], out_path: str | Path) -> bool:
    variants = sorted({r["variant"] for r in rows})
    if len(variants) < 2:
        return False
    plt = _pyplot()
    families = sorted({r["family"] for r in rows})
    fig, axes = plt.subplots(1, len(families), figsize=(4 * len(families), 4), squeeze=False)
    for ax, family in zip(axes[0], families):
        metric = _PRIMARY_METRIC[family]
        values = []
        for variant in variants:
            vals = [
                float(r[metric])
                for r in rows
                if r["variant"] == variant and r["family"] == family and r[metric] != ""
            ]
            values.append(sum(vals) / len(vals) if vals else 0.0)
        ax.bar(range(len(variants)), values)
        ax.set_xticks(range(len(variants)), variants, rotation=30)
        ax.set_title(f"{family} ({metric})")
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Software": "powerpm"})
    plt.close(fig)
    return True


def plot_fewshot_curves(rows: list[dict], out_path: str | Path) -> bool:
    shot = rows
    fractions = sorted({float(r["fraction"]) for r in shot})
    if len(fractions) < 2:
        return False
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant in sorted({r["variant"] for r in shot}):
        for family in sorted({r["family"] for r in shot}):
            metric = _PRIMARY_METRIC[family]
            pts = sorted(
                (float(r["fraction"]), float(r[metric]))
                for r in shot
                if r["variant"] == variant and r["family"] == family and r[metric] != ""
            )
            if len(pts) >= 2:
                ax.plot(
                    [p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=f"{variant}/{family}",
                )
    ax.set_xlabel("fine-tuning data fraction")
    ax.set_ylabel("metric")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Software": "powerpm"})
    plt.close(fig)
    return True


def generate_report(
    metric_files: list[str | Path],
    trace_files: list[str | Path],
    out_dir: str | Path,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = aggregate_runs(metric_files)
    written = []
    aggregate_path = out / "aggregate.csv"
    write_aggregate(rows, aggregate_path)
    written.append(aggregate_path)
    plots = [
        ("loss_curves.png", lambda p: plot_loss_curves(trace_files, p)),
        ("metric_vs_horizon.png", lambda p: plot_metric_vs_horizon(rows, p)),
        ("ablation_bars.png", lambda p: plot_ablation_bars(rows, p)),
        ("fewshot_curves.png", lambda p: plot_fewshot_curves(rows, p)),
    ]
    for name, fn in plots:
        path = out / name
        if fn(path):
            written.append(path)
    return written
