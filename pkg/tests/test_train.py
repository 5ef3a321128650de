"""Training: loss weighting, target construction, the batch loss and the
full optimization loop."""
from datetime import datetime

import numpy as np
import pytest

import glucast.train as train_mod
from glucast.data import GlucoseSeries, SplitSet, Window
from glucast.models import create_model
from glucast.neural import affine_forward, gru_cell_forward
from glucast.quantize import coeff_bin_specs, glucose_bins, value_to_bin
from glucast.train import (
    TrainConfig,
    TrainingDivergedError,
    batch_loss,
    loss_weights,
    make_targets,
    train_model,
)


def mk_window(values, horizon=6):
    values = np.asarray(values, dtype=np.int64)
    return Window(values[:-horizon], values[-horizon:], "p0", "s0",
                  len(values) - horizon - 1)


def sawtooth_splits():
    base = np.array([100, 105, 110, 115, 120, 115, 110, 105], dtype=np.int64)
    vals = np.tile(base, 12)
    mk = lambda sid: GlucoseSeries("p0", sid, datetime(2024, 1, 1), vals)
    return SplitSet(train=[mk("s0")], validation=[mk("s1")], test=[mk("s2")])


def xent(logits, k):
    shifted = logits - logits.max()
    return -(shifted[k] - np.log(np.exp(shifted).sum()))


def run_encoder(model, x):
    states = [np.zeros(g.hidden_size) for g in model.encoder]
    for v in x:
        inp = np.atleast_1d(v)
        for l, gru in enumerate(model.encoder):
            states[l] = gru_cell_forward(inp, states[l], gru)
            inp = states[l]
    return states[-1]


class TestLossWeights:
    def test_uniform_endpoint(self):
        assert loss_weights(1.0, 6).tolist() == [1 / 6] * 6

    def test_direct_endpoint(self):
        assert loss_weights(0.0, 6).tolist() == [0, 0, 0, 0, 0, 1]

    def test_zero_base_single_step(self):
        # 0^0 = 1 keeps h=1 well defined
        assert loss_weights(0.0, 1).tolist() == [1.0]

    def test_half_base_brute_force(self):
        raw = np.array([0.5**5, 0.5**4, 0.5**3, 0.5**2, 0.5, 1.0])
        np.testing.assert_allclose(loss_weights(0.5, 6), raw / raw.sum(), atol=1e-15)

    def test_sum_and_monotonicity(self, rng):
        for _ in range(50):
            b = float(rng.uniform(0, 1))
            w = loss_weights(b, 6)
            assert abs(w.sum() - 1.0) <= 1e-12
            assert np.all(np.diff(w) >= 0)  # later steps never weigh less

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            loss_weights(1.5, 6)
        with pytest.raises(ValueError):
            loss_weights(-0.1, 6)


class TestMakeTargets:
    def test_value_targets_are_bin_indices(self):
        w = mk_window(np.concatenate([np.full(10, 120), np.full(6, 100)]))
        cfg = TrainConfig("deepmo")
        assert make_targets(w, cfg).tolist() == [60] * 6

    def test_poly_line_round_trips_within_a_bin(self):
        # target 90, 94, ..., 110 fits (90, 4) exactly
        target = 90 + 4 * np.arange(6)
        w = mk_window(np.concatenate([np.full(10, 90), target]))
        specs = [glucose_bins(), type(glucose_bins())(-10.0, 10.0, 201)]
        bins = make_targets(w, TrainConfig("polymo", degree=1), coeff_bins=specs)
        from glucast.quantize import bin_to_value
        assert abs(bin_to_value(int(bins[0]), specs[0]) - 90.0) <= specs[0].width / 2
        assert abs(bin_to_value(int(bins[1]), specs[1]) - 4.0) <= specs[1].width / 2

    def test_degree_zero_is_quantized_mean(self):
        target = np.array([100, 102, 104, 106, 108, 110])
        w = mk_window(np.concatenate([np.full(10, 100), target]))
        bins = make_targets(w, TrainConfig("polymo", degree=0),
                            coeff_bins=[glucose_bins()])
        assert bins.tolist() == [value_to_bin(target.mean(), glucose_bins())]

    def test_poly_without_specs_rejected(self):
        w = mk_window(np.full(16, 100))
        with pytest.raises(ValueError):
            make_targets(w, TrainConfig("polyseqmo", degree=1))


class TestBatchLoss:
    def make_model_and_windows(self, arch, rng, degree=1, **model_kw):
        windows = [mk_window(rng.integers(70, 330, size=int(rng.integers(16, 24))))
                   for _ in range(12)]
        coeff_bins = (coeff_bin_specs(windows, degree)
                      if arch in ("polymo", "polyseqmo") else None)
        model = create_model(arch, hidden_size=5, num_layers=2, degree=degree,
                             coeff_bins=coeff_bins, seed=3, **model_kw)
        return model, windows

    def test_order_invariant(self, rng):
        model, windows = self.make_model_and_windows("seqmo", rng)
        cfg = TrainConfig("seqmo", hidden_size=5, num_layers=2, b_w=0.7)
        a = batch_loss(model, windows, cfg, with_grads=False)
        shuffled = [windows[i] for i in rng.permutation(len(windows))]
        b = batch_loss(model, shuffled, cfg, with_grads=False)
        assert a == pytest.approx(b, abs=1e-9)

    def test_recursive_matches_manual_single_step(self, rng):
        model, windows = self.make_model_and_windows("recursive", rng)
        cfg = TrainConfig("recursive", hidden_size=5, num_layers=2)
        manual = np.mean([
            xent(affine_forward(run_encoder(model, model.normalize(w.input)),
                                model.heads[0]),
                 value_to_bin(float(w.target[0]), model.value_bins))
            for w in windows
        ])
        assert batch_loss(model, windows, cfg, with_grads=False) == pytest.approx(
            manual, abs=1e-9)

    def test_deepmo_matches_manual_weighted_sum(self, rng):
        model, windows = self.make_model_and_windows("deepmo", rng)
        cfg = TrainConfig("deepmo", hidden_size=5, num_layers=2, b_w=0.6)
        w6 = loss_weights(0.6, 6)
        manual = 0.0
        for w in windows:
            z = run_encoder(model, model.normalize(w.input))
            tb = value_to_bin(np.asarray(w.target, float), model.value_bins)
            manual += sum(w6[i] * xent(affine_forward(z, model.heads[i]), tb[i])
                          for i in range(6))
        manual /= len(windows)
        assert batch_loss(model, windows, cfg, with_grads=False) == pytest.approx(
            manual, abs=1e-9)

    def test_seqmo_matches_manual_teacher_forcing(self, rng):
        model, windows = self.make_model_and_windows("seqmo", rng)
        cfg = TrainConfig("seqmo", hidden_size=5, num_layers=2, b_w=1.0)
        manual = 0.0
        for w in windows:
            h = run_encoder(model, model.normalize(w.input))
            tb = value_to_bin(np.asarray(w.target, float), model.value_bins)
            # decoder sees the true previous value, not its own decode
            prev = model.normalize(np.concatenate([[w.input[-1]], w.target[:5]]))
            for i in range(6):
                h = gru_cell_forward(np.atleast_1d(prev[i]), h, model.decoder)
                manual += xent(affine_forward(h, model.heads[0]), tb[i]) / 6
        manual /= len(windows)
        assert batch_loss(model, windows, cfg, with_grads=False) == pytest.approx(
            manual, abs=1e-9)

    def test_polymo_matches_manual_uniform_weights(self, rng):
        model, windows = self.make_model_and_windows("polymo", rng)
        cfg = TrainConfig("polymo", hidden_size=5, num_layers=2, degree=1)
        manual = 0.0
        for w in windows:
            z = run_encoder(model, model.normalize(w.input))
            tb = make_targets(w, cfg, coeff_bins=model.coeff_bins)
            manual += sum(xent(affine_forward(z, model.heads[j]), tb[j]) / 2
                          for j in range(2))
        manual /= len(windows)
        assert batch_loss(model, windows, cfg, with_grads=False) == pytest.approx(
            manual, abs=1e-9)

    def test_grads_cover_all_params(self, rng):
        model, windows = self.make_model_and_windows("polyseqmo", rng)
        cfg = TrainConfig("polyseqmo", hidden_size=5, num_layers=2, degree=1)
        loss, grads = batch_loss(model, windows, cfg)
        assert set(grads) == set(model.params())
        assert loss == pytest.approx(
            batch_loss(model, windows, cfg, with_grads=False), abs=1e-12)
        assert any(np.any(g != 0) for g in grads.values())

    def test_empty_rejected(self, rng):
        model, _ = self.make_model_and_windows("deepmo", rng)
        with pytest.raises(ValueError):
            batch_loss(model, [], TrainConfig("deepmo"))


class TestTrainConfig:
    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig("seqmo", b_w=1.2)
        with pytest.raises(ValueError):
            TrainConfig("seqmo", patience=0)
        with pytest.raises(ValueError):
            TrainConfig("seqmo", batch_size=0)


class TestTrainModel:
    CFG = dict(hidden_size=6, num_layers=1, learning_rate=3e-3, batch_size=16,
               max_epochs=4, patience=4, seed=5)

    def test_same_seed_reproducible(self, tiny_splits):
        cfg = TrainConfig("deepmo", **self.CFG)
        m1, r1 = train_model(cfg, tiny_splits)
        m2, r2 = train_model(cfg, tiny_splits)
        assert r1.train_loss == r2.train_loss
        assert r1.val_loss == r2.val_loss
        for name, arr in m1.params().items():
            np.testing.assert_array_equal(arr, m2.params()[name])

    def test_best_epoch_is_val_argmin(self, tiny_splits):
        cfg = TrainConfig("recursive", **self.CFG)
        model, rep = train_model(cfg, tiny_splits)
        assert rep.best_val_loss == min(rep.val_loss)
        assert rep.best_epoch == rep.val_loss.index(min(rep.val_loss))
        # restored weights reproduce the recorded best validation loss
        again = batch_loss(model, train_mod.windows_from_series(
            tiny_splits.validation, 10, 6), cfg, with_grads=False)
        assert again == pytest.approx(rep.best_val_loss, abs=1e-12)

    def test_zero_lr_never_learns(self, tiny_splits):
        cfg = TrainConfig("recursive", hidden_size=6, num_layers=1,
                          learning_rate=0.0, batch_size=16, max_epochs=3,
                          patience=5, seed=5)
        model, rep = train_model(cfg, tiny_splits)
        # identical parameters every epoch: losses repeat exactly
        assert rep.val_loss[0] == rep.val_loss[1] == rep.val_loss[2]
        assert rep.best_epoch == 0

    def test_patience_stops_on_plateau(self, tiny_splits):
        cfg = TrainConfig("recursive", hidden_size=6, num_layers=1,
                          learning_rate=0.0, batch_size=16, max_epochs=50,
                          patience=2, seed=5)
        _, rep = train_model(cfg, tiny_splits)
        # epoch 0 is best; equal losses never count as improvement
        assert rep.epochs == 3

    def test_step_weights_recorded(self, tiny_splits):
        cfg = TrainConfig("seqmo", b_w=0.5, **self.CFG)
        _, rep = train_model(cfg, tiny_splits)
        np.testing.assert_allclose(rep.step_weights, loss_weights(0.5, 6), atol=1e-15)
        cfg2 = TrainConfig("polymo", degree=1, **self.CFG)
        _, rep2 = train_model(cfg2, tiny_splits)
        assert rep2.step_weights == [0.5, 0.5]

    def test_report_serializes(self, tiny_splits):
        cfg = TrainConfig("recursive", **self.CFG)
        _, rep = train_model(cfg, tiny_splits)
        d = rep.to_dict()
        assert d["architecture"] == "recursive"
        assert d["epochs"] == len(d["train_loss"]) == rep.epochs
        assert d["best_epoch"] == rep.best_epoch

    def test_learns_sawtooth_pattern(self):
        # a deterministic repeating series must be predictable far below
        # the uniform-guess loss of ln(361) = 5.889
        cfg = TrainConfig("recursive", hidden_size=8, num_layers=1,
                          learning_rate=5e-3, batch_size=16, max_epochs=60,
                          patience=60, seed=0)
        _, rep = train_model(cfg, sawtooth_splits())
        assert rep.best_val_loss < 5.0
        assert rep.train_loss[-1] < rep.train_loss[0]

    def test_empty_split_rejected(self, tiny_splits):
        empty = SplitSet(train=[], validation=tiny_splits.validation,
                         test=tiny_splits.test)
        with pytest.raises(ValueError):
            train_model(TrainConfig("recursive", **self.CFG), empty)

    def test_non_finite_train_loss_aborts(self, tiny_splits, monkeypatch):
        real = train_mod._tape_loss

        def poisoned(*args, **kwargs):
            loss, pvars = real(*args, **kwargs)
            loss.value = np.float64("nan")
            return loss, pvars

        monkeypatch.setattr(train_mod, "_tape_loss", poisoned)
        with pytest.raises(TrainingDivergedError, match="epoch 0"):
            train_model(TrainConfig("recursive", **self.CFG), tiny_splits)

    def test_non_finite_val_loss_aborts(self, tiny_splits, monkeypatch):
        monkeypatch.setattr(train_mod, "batch_loss",
                            lambda *a, **k: float("inf"))
        with pytest.raises(TrainingDivergedError, match="validation"):
            train_model(TrainConfig("recursive", **self.CFG), tiny_splits)

    def test_window_caps_respected(self, tiny_splits):
        cfg = TrainConfig("recursive", hidden_size=6, num_layers=1,
                          learning_rate=1e-3, batch_size=8, max_epochs=1,
                          patience=1, seed=5, max_train_windows=20,
                          max_val_windows=10)
        model, rep = train_model(cfg, tiny_splits)
        assert rep.epochs == 1  # smoke: capped run completes
