"""Aggregate run directories and sweep CSVs under an output directory.

Runs that share a config up to the seed form one row; accuracy is reported
as mean +- sample std (in percent, one decimal) of the final probe accuracy.
"""
from __future__ import annotations

import csv
import glob
import hashlib
import io
import json
import os

import numpy as np

from .experiments import ExperimentConfig, read_metrics

NO_RUNS = "no runs found"


def _label(cfg: ExperimentConfig) -> str:
    bb = cfg.backbone
    kind = "" if bb.equivariant else " (non-equivariant)"
    return f"{cfg.data.kind} {bb.family} {cfg.loss}{kind}"


def collect_runs(out_dir) -> dict:
    """``group key -> {label, runs: {run_hash: (seed, accuracy)}}``; duplicates merge by hash."""
    groups: dict = {}
    for cfg_path in sorted(glob.glob(os.path.join(out_dir, "**", "config.json"), recursive=True)):
        run_dir = os.path.dirname(cfg_path)
        metrics = os.path.join(run_dir, "metrics.csv")
        if not os.path.exists(metrics):
            continue
        cfg = ExperimentConfig.load(cfg_path)
        rows = read_metrics(metrics)
        if not rows:
            continue
        key = json.dumps({k: v for k, v in json.loads(cfg.canonical_json()).items()
                          if k != "seed"}, sort_keys=True)
        g = groups.setdefault(key, {"label": _label(cfg), "runs": {}})
        g["runs"][cfg.run_hash] = (cfg.seed, rows[-1].probe_accuracy)
    return groups


def _mean_std(values) -> tuple[float, float]:
    v = 100.0 * np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def emit_report(out_dir, write: bool = True) -> tuple[str, str]:
    """Return ``(markdown, csv)``; with ``write`` both land in ``out_dir``."""
    groups = collect_runs(out_dir)
    sweeps = sorted(glob.glob(os.path.join(out_dir, "sweep-*.csv")))
    table = []
    labels = [g["label"] for g in groups.values()]
    for key in sorted(groups, key=lambda k: (groups[k]["label"], k)):
        g = groups[key]
        label = g["label"]
        if labels.count(label) > 1:
            label += f" [{hashlib.sha256(key.encode()).hexdigest()[:6]}]"
        runs = sorted(g["runs"].values())
        mean, std = _mean_std([a for _, a in runs])
        table.append((label, len(runs), " ".join(str(s) for s, _ in runs), mean, std))

    md = ["# Run summary", ""]
    if not table and not sweeps:
        md.append(NO_RUNS)
    if table:
        md += ["| setting | seeds | probe accuracy (%) |", "|---|---|---|"]
        for label, n, seeds, mean, std in table:
            md.append(f"| {label} | {seeds} | {mean:.1f} ± {std:.1f} |")
        md.append("")
    for path in sweeps:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        md += [f"## {os.path.basename(path)[:-4]}", "",
               "| setting | accuracy (%) | change vs first (%) |", "|---|---|---|"]
        for r in rows:
            md.append(f"| {r['setting']} | {100 * float(r['accuracy']):.1f} | "
                      f"{float(r['pct_change_vs_first']):.1f} |")
        md.append("")
    markdown = "\n".join(md).rstrip("\n") + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", "num_seeds", "seeds", "mean_accuracy_pct", "std_accuracy_pct"])
    for label, n, seeds, mean, std in table:
        w.writerow([label, n, seeds, f"{mean:.1f}", f"{std:.1f}"])
    text = buf.getvalue()
    if write:
        with open(os.path.join(out_dir, "report.md"), "w") as f:
            f.write(markdown)
        with open(os.path.join(out_dir, "report.csv"), "w") as f:
            f.write(text)
    return markdown, text
