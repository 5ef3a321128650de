"""Training loops for the deep forecasters.

Targets are class indices (value bins or coefficient bins), the loss is
weighted multi-step cross-entropy, optimization is ADAM with weight
decay, and early stopping restores the best-validation checkpoint. All
architectures are trained teacher-forced; autoregressive feedback only
happens at inference.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import SplitSet, windows_from_series
from .models import POLY_ARCHS, VALUE_ARCHS, ForecasterModel, create_model, forecast_batch
from .neural import GRU_KEYS, AdamState, adam_step
from .quantize import bin_to_value, coeff_bin_specs, glucose_bins, value_to_bin


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    architecture: str
    horizon: int = 6
    degree: int = 1
    hidden_size: int = 64
    num_layers: int = 2
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 64
    patience: int = 50
    max_epochs: int = 500
    b_w: float = 1.0
    normalization: str = "divide"
    decoder_feedback: bool = True
    min_history: int = 10
    max_history: int | None = 24
    max_train_windows: int | None = None
    max_val_windows: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.b_w <= 1.0:
            raise ValueError(f"b_w must lie in [0, 1], got {self.b_w}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.horizon < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("horizon, max_epochs and batch_size must be >= 1")


@dataclass
class TrainReport:
    """Per-epoch history plus the early-stopping outcome."""

    architecture: str
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_ape: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    step_weights: list = field(default_factory=list)
    wall_clock_sec: float = 0.0
    checkpoint_path: str | None = None

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "train_loss": [float(v) for v in self.train_loss],
            "val_loss": [float(v) for v in self.val_loss],
            "val_ape": [float(v) for v in self.val_ape],
            "best_epoch": self.best_epoch,
            "best_val_loss": float(self.best_val_loss),
            "step_weights": [float(v) for v in self.step_weights],
            "epochs": self.epochs,
            "wall_clock_sec": self.wall_clock_sec,
            "checkpoint_path": self.checkpoint_path,
        }


def loss_weights(b_w: float, h: int) -> np.ndarray:
    """Per-step loss weights w_i proportional to b_w^(h-i), i in 1..h.

    Normalized to sum 1, with 0^0 = 1 so b_w=0 collapses onto the final
    step (direct forecasting) and b_w=1 spreads uniformly (multi-output).
    """
    if not 0.0 <= b_w <= 1.0:
        raise ValueError(f"b_w must lie in [0, 1], got {b_w}")
    w = np.power(float(b_w), np.arange(h - 1, -1, -1, dtype=float))
    return w / w.sum()


def make_targets(window, config: TrainConfig, value_bins=None, coeff_bins=None) -> np.ndarray:
    """Class indices for one window under the configured architecture."""
    value_bins = value_bins or glucose_bins()
    target = np.asarray(window.target, dtype=float)
    if config.architecture in VALUE_ARCHS:
        return np.atleast_1d(value_to_bin(target, value_bins))
    if coeff_bins is None:
        raise ValueError("polynomial targets need coefficient bin specs")
    basis = np.vander(np.arange(len(target), dtype=float), config.degree + 1, increasing=True)
    coeffs, *_ = np.linalg.lstsq(basis, target, rcond=None)
    return np.array(
        [value_to_bin(c, spec) for c, spec in zip(coeffs, coeff_bins)], dtype=np.int64
    )


def _prepare_rows(model: ForecasterModel, windows, config: TrainConfig):
    """Per-window normalized inputs, target bins and decoder feedback rows."""
    n = len(windows)
    h = config.horizon
    inputs = [model.normalize(model.clip_history(w.input)) for w in windows]
    targets = np.stack([np.asarray(w.target, dtype=float) for w in windows])
    if model.architecture in VALUE_ARCHS:
        tbins = value_to_bin(targets, model.value_bins)
    else:
        basis = np.vander(np.arange(h, dtype=float), model.degree + 1, increasing=True)
        coeffs = np.linalg.lstsq(basis, targets.T, rcond=None)[0].T
        tbins = np.empty((n, model.degree + 1), dtype=np.int64)
        for j, spec in enumerate(model.coeff_bins):
            tbins[:, j] = value_to_bin(coeffs[:, j], spec)
    feedback = None
    if model.architecture == "seqmo":
        if model.decoder_feedback:
            prev = np.column_stack(
                [[float(w.input[-1]) for w in windows], targets[:, : h - 1]]
            )
            feedback = model.normalize(prev)
        else:
            feedback = np.zeros((n, h))
    elif model.architecture == "polyseqmo":
        feedback = np.zeros((n, model.degree + 1))
        for j in range(model.degree):
            spec = model.coeff_bins[j]
            decoded = bin_to_value(tbins[:, j], spec)
            feedback[:, j + 1] = (decoded - spec.min_value) / (spec.max_value - spec.min_value)
    return inputs, tbins, feedback


def _tape_loss(model: ForecasterModel, x: np.ndarray, tbins: np.ndarray,
               feedback, weights: np.ndarray):
    """Teacher-forced batch loss on the autodiff tape.

    Returns (loss Var, param Vars) so callers can run backward and read
    gradients by parameter name.
    """
    pvars = {name: ad.Var(arr) for name, arr in model.params().items()}
    enc = [
        {k: pvars[f"enc{l}.{k}"] for k in GRU_KEYS} for l in range(len(model.encoder))
    ]
    dec = {k: pvars[f"dec.{k}"] for k in GRU_KEYS} if model.decoder is not None else None
    heads = [
        (pvars[f"head{j}.weight"], pvars[f"head{j}.bias"]) for j in range(len(model.heads))
    ]
    b = x.shape[0]
    states = [ad.Var(np.zeros((b, g.hidden_size))) for g in model.encoder]
    for t in range(x.shape[1]):
        inp = x[:, t : t + 1]
        for l, p in enumerate(enc):
            states[l] = ad.gru_step(inp, states[l], p)
            inp = states[l]
    z = states[-1]

    arch = model.architecture
    if arch == "recursive":
        loss = ad.softmax_xent_mean(ad.affine(z, *heads[0]), tbins[:, 0])
        return loss, pvars
    if arch == "deepmo":
        parts = [
            ad.scale(ad.softmax_xent_mean(ad.affine(z, *heads[i]), tbins[:, i]), weights[i])
            for i in range(model.horizon)
        ]
        return ad.add_n(parts), pvars
    if arch == "seqmo":
        state = z
        parts = []
        for i in range(model.horizon):
            state = ad.gru_step(feedback[:, i : i + 1], state, dec)
            xent = ad.softmax_xent_mean(ad.affine(state, *heads[0]), tbins[:, i])
            parts.append(ad.scale(xent, weights[i]))
        return ad.add_n(parts), pvars
    if arch == "polymo":
        n_coeff = model.degree + 1
        parts = [
            ad.scale(ad.softmax_xent_mean(ad.affine(z, *heads[j]), tbins[:, j]), 1.0 / n_coeff)
            for j in range(n_coeff)
        ]
        return ad.add_n(parts), pvars
    # polyseqmo
    n_coeff = model.degree + 1
    state = z
    parts = []
    for j in range(n_coeff):
        state = ad.gru_step(feedback[:, j : j + 1], state, dec)
        xent = ad.softmax_xent_mean(ad.affine(state, *heads[j]), tbins[:, j])
        parts.append(ad.scale(xent, 1.0 / n_coeff))
    return ad.add_n(parts), pvars


def _arch_weights(config: TrainConfig) -> np.ndarray:
    if config.architecture == "recursive":
        return np.array([1.0])
    if config.architecture in POLY_ARCHS:
        return np.full(config.degree + 1, 1.0 / (config.degree + 1))
    return loss_weights(config.b_w, config.horizon)


def batch_loss(model: ForecasterModel, windows, config: TrainConfig,
               with_grads: bool = True):
    """Mean per-window training loss over ``windows``, with gradients.

    Windows are bucketed by history length; the result is the exact
    sample mean, so it is invariant to window order up to float
    accumulation. Used by training, validation scoring and gradient
    checks alike.
    """
    if not windows:
        raise ValueError("need at least one window")
    weights = _arch_weights(config)
    inputs, tbins, feedback = _prepare_rows(model, windows, config)
    n = len(inputs)
    buckets = {}
    for i, row in enumerate(inputs):
        buckets.setdefault(len(row), []).append(i)
    total = 0.0
    grads = (
        {name: np.zeros_like(arr) for name, arr in model.params().items()}
        if with_grads
        else None
    )
    for length in sorted(buckets):
        idx = buckets[length]
        x = np.stack([inputs[i] for i in idx])
        tb = tbins[idx]
        fb = feedback[idx] if feedback is not None else None
        loss, pvars = _tape_loss(model, x, tb, fb, weights)
        frac = len(idx) / n
        total += float(loss.value) * frac
        if with_grads:
            ad.backward(loss)
            for name, v in pvars.items():
                if v.grad is not None:
                    grads[name] += v.grad * frac
    return (total, grads) if with_grads else total


def _subsample(windows, cap, rng):
    if cap is None or len(windows) <= cap:
        return windows
    keep = np.sort(rng.choice(len(windows), size=cap, replace=False))
    return [windows[i] for i in keep]


def train_model(config: TrainConfig, splits: SplitSet):
    """Train one forecaster on session splits; returns (model, report).

    Deterministic given config.seed: initialization, window subsampling
    and epoch shuffling all draw from one seeded generator.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    train_windows = windows_from_series(
        splits.train, min_history=config.min_history, horizon=config.horizon
    )
    val_windows = windows_from_series(
        splits.validation, min_history=config.min_history, horizon=config.horizon
    )
    if not train_windows or not val_windows:
        raise ValueError("training requires nonempty train and validation windows")
    train_windows = _subsample(train_windows, config.max_train_windows, rng)
    val_windows = _subsample(val_windows, config.max_val_windows, rng)

    norm_mean = norm_std = None
    if config.normalization == "standardize":
        all_values = np.concatenate([s.values for s in splits.train]).astype(float)
        norm_mean = float(all_values.mean())
        norm_std = float(all_values.std()) or 1.0
    coeff_bins = None
    if config.architecture in POLY_ARCHS:
        coeff_bins = coeff_bin_specs(train_windows, config.degree)
    model = create_model(
        config.architecture,
        hidden_size=config.hidden_size,
        num_layers=config.num_layers,
        horizon=config.horizon,
        degree=config.degree if config.architecture in POLY_ARCHS else None,
        coeff_bins=coeff_bins,
        normalization=config.normalization,
        norm_mean=norm_mean,
        norm_std=norm_std,
        decoder_feedback=config.decoder_feedback,
        max_history=config.max_history,
        seed=rng,
    )
    weights = _arch_weights(config)
    report = TrainReport(architecture=config.architecture, step_weights=list(map(float, weights)))

    inputs, tbins, feedback = _prepare_rows(model, train_windows, config)
    n = len(inputs)
    val_histories = [w.input for w in val_windows]
    val_actuals = np.stack([np.asarray(w.target, dtype=float) for w in val_windows])

    adam = AdamState(lr=config.learning_rate, weight_decay=config.weight_decay)
    params = model.params()
    best_params = None
    since_best = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        pending = {}
        batches = []
        for i in order:
            pending.setdefault(len(inputs[i]), []).append(i)
            if len(pending[len(inputs[i])]) == config.batch_size:
                batches.append(pending.pop(len(inputs[i])))
        for length in sorted(pending):
            batches.append(pending[length])
        epoch_loss = 0.0
        for batch in batches:
            x = np.stack([inputs[i] for i in batch])
            tb = tbins[batch]
            fb = feedback[batch] if feedback is not None else None
            loss, pvars = _tape_loss(model, x, tb, fb, weights)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch} "
                    f"({config.architecture}, lr={config.learning_rate})"
                )
            ad.backward(loss)
            grads = {
                name: (v.grad if v.grad is not None else np.zeros_like(v.value))
                for name, v in pvars.items()
            }
            adam_step(params, grads, adam)
            epoch_loss += float(loss.value) * len(batch) / n
        val_loss = batch_loss(model, val_windows, config, with_grads=False)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        preds = forecast_batch(model, val_histories)
        val_ape = float(100.0 * np.mean(np.abs(preds - val_actuals) / val_actuals))
        report.train_loss.append(epoch_loss)
        report.val_loss.append(val_loss)
        report.val_ape.append(val_ape)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_params = {name: arr.copy() for name, arr in params.items()}
            since_best = 0
        else:
            since_best += 1
        if since_best >= config.patience:
            break
    if best_params is not None:
        model.set_params(best_params)
    report.wall_clock_sec = time.perf_counter() - t0
    return model, report
