"""Evaluation over fixed ratios and ratio sweeps, result CSVs and F1 curves."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch

from . import data as D
from .decoder import predict_mask
from .metrics import ConfusionCounts, MetricReport, confusion, report
from .synthesis import BitemporalSample, prepare_inference_pair

CSV_FIELDS = ("ratio", "precision", "recall", "f1", "iou", "oa", "n_pixels")


def _stack(samples, key, dtype):
    return torch.from_numpy(np.stack([getattr(s, key) for s in samples])).permute(0, 3, 1, 2).to(dtype)


@torch.no_grad()
def predict(model, samples: list[BitemporalSample], batch_size: int = 8) -> list[np.ndarray]:
    """Binary change masks for inference-ready samples (both slots at full size)."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    masks = []
    try:
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            scores = model.scores(_stack(chunk, "pre", dtype), _stack(chunk, "post", dtype))
            masks.extend(predict_mask(scores))
    finally:
        model.train(was_training)
    return masks


def evaluate_prepared(model, samples: list[BitemporalSample], batch_size: int = 8) -> ConfusionCounts:
    total = ConfusionCounts()
    for s, m in zip(samples, predict(model, samples, batch_size)):
        total = total + confusion(m, s.label)
    return total


def evaluate_ratio(model, samples: list[BitemporalSample], ratio: float | None = None,
                   degraded_slot: str = "post", batch_size: int = 8):
    """Metrics at one ratio.

    ``samples`` are equal-size pairs degraded to ``ratio`` (via the sweep path),
    or, with ``ratio=None``, pairs that already carry an LR slot.
    """
    if ratio is None:
        prepared = [prepare_inference_pair(s) for s in samples]
        counts = evaluate_prepared(model, prepared, batch_size)
        return report(counts), counts
    return sweep(model, samples, D.SweepSpec([ratio], degraded_slot), batch_size)[0][1:]


def sweep(model, samples: list[BitemporalSample], spec: D.SweepSpec, batch_size: int = 8):
    """``[(ratio, report, counts), ...]``, one entry per ratio of ``spec``."""
    per_ratio = [[] for _ in spec.ratios]
    for s in samples:
        for k, swept in enumerate(D.make_sweep(s, spec)):
            per_ratio[k].append(swept)
    out = []
    for r, prepared in zip(spec.ratios, per_ratio):
        counts = evaluate_prepared(model, prepared, batch_size)
        out.append((r, report(counts), counts))
    return out


def write_results_csv(path, rows):
    """Write ``(ratio, MetricReport, ConfusionCounts)`` rows in the result schema."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for ratio, rep, counts in rows:
            w.writerow([repr(float(ratio)), *(repr(float(getattr(rep, k))) for k in CSV_FIELDS[1:6]), counts.total])


def read_results_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: header lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                parsed = {k: float(row[k]) for k in CSV_FIELDS[:6]}
                parsed["n_pixels"] = int(row["n_pixels"])
            except (TypeError, ValueError) as e:
                raise ValueError(f"{path}: malformed row {lineno}: {e}") from None
            rows.append(parsed)
    return rows


def plot_curve(csv_paths, out_path, labels=None, merged_csv=None):
    """F1 against ratio, one line per CSV in input order; also writes a merged CSV.

    Returns the matplotlib figure.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_paths = [Path(p) for p in csv_paths]
    labels = list(labels) if labels else [p.stem for p in csv_paths]
    if len(labels) != len(csv_paths):
        raise ValueError("need one label per CSV")
    runs = [read_results_csv(p) for p in csv_paths]
    for p, rows in zip(csv_paths, runs):
        if not rows:
            raise ValueError(f"{p}: no ratio rows to plot")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, rows in zip(labels, runs):
        ax.plot([r["ratio"] for r in rows], [r["f1"] for r in rows], marker="o", label=label)
    ax.set_xlabel("resolution difference ratio")
    ax.set_ylabel("F1")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    merged_csv = Path(merged_csv) if merged_csv else out_path.with_suffix(".csv")
    with open(merged_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("run", *CSV_FIELDS))
        for label, rows in zip(labels, runs):
            for r in rows:
                w.writerow([label, *(r[k] for k in CSV_FIELDS)])
    plt.close(fig)
    return fig
