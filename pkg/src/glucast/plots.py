"""Matplotlib figures for reports: series previews, per-step error
curves, median comparison bars, loss curves and b_w sweeps.

Rendering is headless (Agg) and byte-stable: the PNG Software tag is
stripped so identical inputs produce identical files.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import NORMAL_HIGH, NORMAL_LOW, SAMPLE_PERIOD

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_series(series, path, max_points: int = 1000):
    """One session's glucose trace with the normal band shaded."""
    values = np.asarray(series.values)[:max_points]
    hours = np.arange(len(values)) * (SAMPLE_PERIOD.total_seconds() / 3600.0)
    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.axhspan(NORMAL_LOW, NORMAL_HIGH, color="tab:green", alpha=0.12, lw=0)
    ax.plot(hours, values, lw=0.9, color="tab:blue")
    ax.set_xlabel("hours")
    ax.set_ylabel("glucose (mg/dL)")
    ax.set_title(f"patient {series.patient_id}, session {series.session_id}")
    _finish(fig, path)


def plot_per_step(reports, path):
    """Mean APE per forecast step, one line per model."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for r in reports:
        steps = np.arange(1, len(r.per_step) + 1)
        ax.plot(steps, r.per_step, marker="o", ms=3.5, label=r.model_id)
    ax.set_xlabel("forecast step")
    ax.set_ylabel("mean APE (%)")
    ax.set_xticks(np.arange(1, max(len(r.per_step) for r in reports) + 1))
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _finish(fig, path)


def plot_medians(reports, path, subset: str = "full"):
    """Median APE per model with 2.5-97.5 percentile whiskers."""
    rows = [(r.model_id, r.subsets[subset]) for r in reports if r.subsets[subset].count]
    if not rows:
        raise ValueError(f"no models have data in subset {subset!r}")
    names = [n for n, _ in rows]
    med = np.array([s.median for _, s in rows])
    lo = med - np.array([s.p2_5 for _, s in rows])
    hi = np.array([s.p97_5 for _, s in rows]) - med
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(rows))
    ax.bar(x, med, yerr=[lo, hi], capsize=3, color="tab:blue", alpha=0.85)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("median APE (%)")
    ax.set_title(f"{subset} subset")
    ax.grid(axis="y", alpha=0.3)
    _finish(fig, path)


def plot_loss_curves(report, path):
    """Train and validation loss per epoch, best epoch marked."""
    fig, ax = plt.subplots(figsize=(6.4, 4))
    epochs = np.arange(len(report.train_loss))
    ax.plot(epochs, report.train_loss, label="train")
    ax.plot(epochs, report.val_loss, label="validation")
    if report.best_epoch >= 0:
        ax.axvline(report.best_epoch, color="k", ls="--", lw=0.8, label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.set_title(report.architecture)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _finish(fig, path)


def plot_sweep(bw_values, step_errors, path):
    """Final-step error as a function of the loss-weight base b_w."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(bw_values, step_errors, marker="o")
    ax.set_xlabel("b_w")
    ax.set_ylabel("step-6 mean APE (%)")
    ax.grid(alpha=0.3)
    _finish(fig, path)
