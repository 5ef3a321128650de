"""Figure rendering smoke tests: files appear and are reproducible."""
from datetime import datetime

import numpy as np
import pytest

from glucast.data import GlucoseSeries, Window, tag_events
from glucast.evaluate import evaluate
from glucast.models import create_model
from glucast.plots import (
    plot_loss_curves,
    plot_medians,
    plot_per_step,
    plot_series,
    plot_sweep,
)
from glucast.train import TrainReport


@pytest.fixture(scope="module")
def reports(tmp_path_factory):
    rng = np.random.default_rng(0)
    windows = []
    for _ in range(25):
        w = Window(rng.integers(75, 170, size=12),
                   rng.integers(60, 200, size=6), "p0", "s0", 11)
        windows.append(tag_events(w))
    out = []
    for seed, name in ((0, "a"), (1, "b")):
        model = create_model("deepmo", hidden_size=4, num_layers=1, seed=seed)
        out.append(evaluate(model, windows, smoothing_degree=None, model_id=name))
    return out


def png_ok(path):
    data = path.read_bytes()
    return data[:8] == b"\x89PNG\r\n\x1a\n" and len(data) > 500


def test_plot_series(tmp_path):
    series = GlucoseSeries("p0", "s0", datetime(2024, 1, 1),
                           np.linspace(80, 200, 50).astype(np.int64))
    path = tmp_path / "series.png"
    plot_series(series, path)
    assert png_ok(path)


def test_plot_per_step(reports, tmp_path):
    path = tmp_path / "steps.png"
    plot_per_step(reports, path)
    assert png_ok(path)


def test_plot_medians(reports, tmp_path):
    path = tmp_path / "medians.png"
    plot_medians(reports, path)
    assert png_ok(path)


def test_plot_medians_empty_subset_rejected(reports, tmp_path):
    with pytest.raises(ValueError):
        plot_medians([], tmp_path / "nope.png")


def test_plot_loss_curves(tmp_path):
    rep = TrainReport(architecture="seqmo",
                      train_loss=[5.0, 4.0, 3.5], val_loss=[5.1, 4.2, 4.0],
                      val_ape=[20.0, 15.0, 14.0], best_epoch=2)
    path = tmp_path / "loss.png"
    plot_loss_curves(rep, path)
    assert png_ok(path)


def test_plot_sweep(tmp_path):
    path = tmp_path / "sweep.png"
    plot_sweep([0.0, 0.5, 1.0], [5.0, 4.5, 4.2], path)
    assert png_ok(path)


def test_renders_are_deterministic(reports, tmp_path):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    plot_per_step(reports, a)
    plot_per_step(reports, b)
    assert a.read_bytes() == b.read_bytes()
