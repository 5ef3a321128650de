"""Window-APE evaluation: per-window scores, subset summaries, per-step
error curves and serialized comparison reports.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import tag_events
from .models import ForecasterModel, forecast_batch
from .polyfit import smooth_many
from .quantize import GLUCOSE_MAX, GLUCOSE_MIN

SUBSET_NAMES = ("full", "event", "hypo", "hyper")


def ape_window(pred, actual) -> float:
    """Mean absolute percentage error over one prediction window."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs actual {actual.shape}")
    return float(100.0 * np.mean(np.abs(pred - actual) / actual))


@dataclass
class SummaryStats:
    """Distribution summary of per-window APEs; fields are None when empty."""

    median: float | None
    p2_5: float | None
    p97_5: float | None
    mean: float | None
    count: int

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "p2_5": self.p2_5,
            "p97_5": self.p97_5,
            "mean": self.mean,
            "count": self.count,
        }


def summarize(apes) -> SummaryStats:
    """Median, 2.5th/97.5th percentiles and mean of a nonempty collection.

    Percentiles interpolate linearly between order statistics.
    """
    arr = np.asarray(list(apes), dtype=float)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty collection")
    med, lo, hi = np.percentile(arr, [50.0, 2.5, 97.5])
    return SummaryStats(float(med), float(lo), float(hi), float(arr.mean()), int(arr.size))


def per_step_errors(preds, actuals) -> np.ndarray:
    """Mean APE at each forecast step across aligned sample matrices."""
    preds = np.asarray(preds, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if preds.shape != actuals.shape:
        raise ValueError(f"shape mismatch: preds {preds.shape} vs actuals {actuals.shape}")
    return 100.0 * np.mean(np.abs(preds - actuals) / actuals, axis=0)


@dataclass
class EvalReport:
    model_id: str
    config_hash: str
    smoothing_degree: int | None
    subsets: dict
    per_step: list

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "config_hash": self.config_hash,
            "smoothing_degree": self.smoothing_degree,
            "subsets": {name: s.to_dict() for name, s in self.subsets.items()},
            "per_step": [float(v) for v in self.per_step],
        }


def thread_count() -> int:
    """Evaluation parallelism cap from GLUCAST_THREADS (default 1)."""
    raw = os.environ.get("GLUCAST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"GLUCAST_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"GLUCAST_THREADS must be >= 1, got {n}")
    return n


def predict_matrix(model, histories) -> np.ndarray:
    """(n, h) prediction matrix from a model, ensemble or plain callable.

    Work is split into contiguous chunks across at most GLUCAST_THREADS
    threads and reassembled in order, so results never depend on the
    thread count.
    """
    if isinstance(model, ForecasterModel):
        fn = lambda chunk: forecast_batch(model, chunk)
    elif hasattr(model, "forecast_batch"):
        fn = model.forecast_batch
    else:
        fn = lambda chunk: np.stack([np.asarray(model(h), dtype=float) for h in chunk])
    n = len(histories)
    workers = min(thread_count(), n)
    if workers <= 1:
        return np.asarray(fn(histories), dtype=float)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [histories[bounds[i] : bounds[i + 1]] for i in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(fn, chunks))
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def evaluate(model, windows, smoothing_degree: int | None = 1,
             model_id: str = "model", config_hash: str = "") -> EvalReport:
    """Score a forecaster on tagged test windows.

    Forecasts are optionally projected onto a best-fit polynomial of
    ``smoothing_degree`` (None disables smoothing) and clamped to the
    sensor range before APE aggregation over the full/event/hypo/hyper
    subsets and the per-step curve.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("cannot evaluate on an empty window set")
    for w in windows:
        tag_events(w)
    actuals = np.stack([np.asarray(w.target, dtype=float) for w in windows])
    preds = predict_matrix(model, [w.input for w in windows])
    if smoothing_degree is not None:
        preds = np.clip(smooth_many(preds, smoothing_degree), GLUCOSE_MIN, GLUCOSE_MAX)
    apes = 100.0 * np.mean(np.abs(preds - actuals) / actuals, axis=1)
    masks = {
        "full": np.ones(len(windows), dtype=bool),
        "event": np.array([w.is_event for w in windows]),
        "hypo": np.array([w.is_hypo_onset for w in windows]),
        "hyper": np.array([w.is_hyper_onset for w in windows]),
    }
    subsets = {}
    for name in SUBSET_NAMES:
        sel = apes[masks[name]]
        subsets[name] = summarize(sel) if sel.size else SummaryStats(None, None, None, None, 0)
    return EvalReport(
        model_id=model_id,
        config_hash=config_hash,
        smoothing_degree=smoothing_degree,
        subsets=subsets,
        per_step=[float(v) for v in per_step_errors(preds, actuals)],
    )


def config_digest(mapping: dict) -> str:
    """Short stable hash of a flat config mapping, for report provenance."""
    canon = json.dumps({str(k): str(v) for k, v in mapping.items()}, sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def write_reports_json(reports: list, path):
    payload = {"reports": [r.to_dict() for r in reports]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def write_table_csv(reports: list, path):
    """Wide comparison table: one row per model, stat columns per subset."""
    fields = ["median", "p2_5", "p97_5", "mean", "count"]
    header = ["model"] + [f"{s}_{f}" for s in SUBSET_NAMES for f in fields]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for r in reports:
            row = [r.model_id]
            for name in SUBSET_NAMES:
                d = r.subsets[name].to_dict()
                row.extend("" if d[k] is None else repr(d[k]) if k != "count" else d[k]
                           for k in fields)
            writer.writerow(row)


def write_per_step_csv(reports: list, path):
    """Plot-ready long-form curve data: step_index, model, mean_ape."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step_index", "model", "mean_ape"])
        for r in reports:
            for i, v in enumerate(r.per_step, start=1):
                writer.writerow([i, r.model_id, repr(float(v))])
