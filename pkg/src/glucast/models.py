"""The five deep forecaster architectures behind one contract:
``forecast(model, history) -> h values``.

Value architectures (recursive, deepmo, seqmo) decode per-step categorical
distributions over glucose bins; polynomial architectures (polymo,
polyseqmo) decode one distribution per coefficient and evaluate the
resulting polynomial over the horizon. Inference is plain numpy and
read-only, so trained models are safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .neural import GRU_KEYS, AffineParams, GruParams, affine_forward, gru_cell_forward, softmax
from .polyfit import PolyCoeffs
from .quantize import BinSpec, bin_to_value, glucose_bins

ARCHITECTURES = ("recursive", "deepmo", "seqmo", "polymo", "polyseqmo")
VALUE_ARCHS = ("recursive", "deepmo", "seqmo")
POLY_ARCHS = ("polymo", "polyseqmo")

CHECKPOINT_FORMAT = "glucast-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Forecast:
    """Decoded forecast values plus the distributions they came from."""

    values: np.ndarray
    step_dists: np.ndarray | None = None
    coeff_dists: np.ndarray | None = None
    coeffs: PolyCoeffs | None = None


@dataclass
class ForecasterModel:
    """Trained parameters and architecture wiring for one forecaster."""

    architecture: str
    encoder: list          # stacked GruParams, input layer first
    heads: list            # AffineParams; count depends on the architecture
    decoder: GruParams | None
    value_bins: BinSpec
    coeff_bins: list | None
    horizon: int
    degree: int | None
    normalization: str = "divide"
    norm_mean: float | None = None
    norm_std: float | None = None
    decoder_feedback: bool = True
    max_history: int | None = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.horizon < 1 or not self.encoder:
            raise ValueError("need horizon >= 1 and at least one encoder layer")
        if self.architecture in POLY_ARCHS:
            if self.degree is None or not self.degree < self.horizon:
                raise ValueError("polynomial degree must satisfy degree < horizon")
            if self.coeff_bins is None or len(self.coeff_bins) != self.degree + 1:
                raise ValueError("polynomial models need degree+1 coefficient bin specs")
        expected = {
            "recursive": 1,
            "deepmo": self.horizon,
            "seqmo": 1,
            "polymo": None if self.degree is None else self.degree + 1,
            "polyseqmo": None if self.degree is None else self.degree + 1,
        }[self.architecture]
        if expected is not None and len(self.heads) != expected:
            raise ValueError(
                f"{self.architecture} expects {expected} heads, got {len(self.heads)}"
            )
        if self.architecture in ("seqmo", "polyseqmo") and self.decoder is None:
            raise ValueError(f"{self.architecture} requires a decoder")

    @property
    def hidden_size(self) -> int:
        return self.encoder[0].hidden_size

    def params(self) -> dict:
        """Flat name -> array view of every trainable parameter."""
        out = {}
        for l, gru in enumerate(self.encoder):
            for k in GRU_KEYS:
                out[f"enc{l}.{k}"] = gru.weights[k]
        if self.decoder is not None:
            for k in GRU_KEYS:
                out[f"dec.{k}"] = self.decoder.weights[k]
        for j, head in enumerate(self.heads):
            out[f"head{j}.weight"] = head.weight
            out[f"head{j}.bias"] = head.bias
        return out

    def set_params(self, values: dict):
        for name, arr in self.params().items():
            np.copyto(arr, values[name])

    def normalize(self, values):
        values = np.asarray(values, dtype=float)
        if self.normalization == "none":
            return values
        if self.normalization == "divide":
            return values / self.value_bins.max_value
        if self.normalization == "standardize":
            return (values - self.norm_mean) / self.norm_std
        raise ValueError(f"unknown normalization {self.normalization!r}")

    def clip_history(self, history):
        history = np.asarray(history, dtype=float)
        if history.ndim != 1 or len(history) < 1:
            raise ValueError("history must be a non-empty 1-D value sequence")
        if self.max_history is not None and len(history) > self.max_history:
            history = history[-self.max_history:]
        return history


def create_model(architecture: str, hidden_size: int = 64, num_layers: int = 2,
                 horizon: int = 6, degree: int | None = 1,
                 value_bins: BinSpec | None = None, coeff_bins=None,
                 normalization: str = "divide", norm_mean=None, norm_std=None,
                 decoder_feedback: bool = True, max_history=None,
                 seed: int | np.random.Generator = 0) -> ForecasterModel:
    """Seeded parameter initialization for any architecture.

    Weights are uniform in +-1/sqrt(fan) mirroring common framework
    defaults. Polynomial architectures default their coefficient bins to
    the value bins until trained ranges are attached.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    value_bins = value_bins or glucose_bins()
    if architecture in VALUE_ARCHS:
        degree = None
        coeff_bins = None
        n_heads = {"recursive": 1, "deepmo": horizon, "seqmo": 1}[architecture]
        head_bins = [value_bins] * n_heads
    else:
        if degree is None:
            raise ValueError(f"{architecture} requires a polynomial degree")
        if coeff_bins is None:
            coeff_bins = [value_bins] * (degree + 1)
        head_bins = coeff_bins
    encoder = [
        GruParams.init(1 if l == 0 else hidden_size, hidden_size, rng)
        for l in range(num_layers)
    ]
    decoder = (
        GruParams.init(1, hidden_size, rng) if architecture in ("seqmo", "polyseqmo") else None
    )
    heads = [AffineParams.init(hidden_size, b.n_bins, rng) for b in head_bins]
    return ForecasterModel(
        architecture=architecture,
        encoder=encoder,
        heads=heads,
        decoder=decoder,
        value_bins=value_bins,
        coeff_bins=coeff_bins,
        horizon=horizon,
        degree=degree,
        normalization=normalization,
        norm_mean=norm_mean,
        norm_std=norm_std,
        decoder_feedback=decoder_feedback,
        max_history=max_history,
    )


def _encode_states(model: ForecasterModel, x_norm: np.ndarray) -> list:
    """Run the stacked encoder over a (batch, time) normalized input block;
    returns the final hidden state of every layer, shape (batch, hidden)."""
    b = x_norm.shape[0]
    states = [np.zeros((b, gru.hidden_size)) for gru in model.encoder]
    for t in range(x_norm.shape[1]):
        inp = x_norm[:, t : t + 1]
        for l, gru in enumerate(model.encoder):
            states[l] = gru_cell_forward(inp, states[l], gru)
            inp = states[l]
    return states


def _step_states(model: ForecasterModel, x_col: np.ndarray, states: list) -> list:
    inp = x_col
    out = []
    for l, gru in enumerate(model.encoder):
        h = gru_cell_forward(inp, states[l], gru)
        out.append(h)
        inp = h
    return out


def encode(model: ForecasterModel, history) -> np.ndarray:
    """Final top-layer hidden state after consuming a full history."""
    history = model.clip_history(history)
    x = model.normalize(history)[None, :]
    return _encode_states(model, x)[-1][0]


def _coeff_feedback(model, w_col, j):
    spec = model.coeff_bins[j]
    return (w_col - spec.min_value) / (spec.max_value - spec.min_value)


def _forecast_block(model: ForecasterModel, x_norm: np.ndarray, last_raw: np.ndarray,
                    collect_dists: bool = False):
    """Batched forecast of equal-length normalized histories.

    Returns (values (b, h), extras) where extras carries distributions
    when requested (single-forecast path only, to keep batches lean).
    """
    b = x_norm.shape[0]
    h = model.horizon
    states = _encode_states(model, x_norm)
    z_top = states[-1]
    extras = {}

    if model.architecture == "recursive":
        head = model.heads[0]
        values = np.empty((b, h))
        dists = np.empty((b, h, model.value_bins.n_bins)) if collect_dists else None
        for i in range(h):
            probs = softmax(affine_forward(states[-1], head))
            k = np.argmax(probs, axis=-1)
            v = bin_to_value(k, model.value_bins)
            values[:, i] = v
            if collect_dists:
                dists[:, i] = probs
            states = _step_states(model, model.normalize(v)[:, None], states)
        if collect_dists:
            extras["step_dists"] = dists
        return values, extras

    if model.architecture == "deepmo":
        values = np.empty((b, h))
        dists = np.empty((b, h, model.value_bins.n_bins)) if collect_dists else None
        for i, head in enumerate(model.heads):
            probs = softmax(affine_forward(z_top, head))
            values[:, i] = bin_to_value(np.argmax(probs, axis=-1), model.value_bins)
            if collect_dists:
                dists[:, i] = probs
        if collect_dists:
            extras["step_dists"] = dists
        return values, extras

    if model.architecture == "seqmo":
        head = model.heads[0]
        dec_state = z_top
        x_col = (
            model.normalize(last_raw)[:, None]
            if model.decoder_feedback
            else np.zeros((b, 1))
        )
        values = np.empty((b, h))
        dists = np.empty((b, h, model.value_bins.n_bins)) if collect_dists else None
        for i in range(h):
            dec_state = gru_cell_forward(x_col, dec_state, model.decoder)
            probs = softmax(affine_forward(dec_state, head))
            v = bin_to_value(np.argmax(probs, axis=-1), model.value_bins)
            values[:, i] = v
            if collect_dists:
                dists[:, i] = probs
            x_col = model.normalize(v)[:, None] if model.decoder_feedback else np.zeros((b, 1))
        if collect_dists:
            extras["step_dists"] = dists
        return values, extras

    # polynomial architectures
    n_coeff = model.degree + 1
    coeffs = np.empty((b, n_coeff))
    coeff_dists = [None] * n_coeff
    if model.architecture == "polymo":
        for j, head in enumerate(model.heads):
            probs = softmax(affine_forward(z_top, head))
            coeffs[:, j] = bin_to_value(np.argmax(probs, axis=-1), model.coeff_bins[j])
            if collect_dists:
                coeff_dists[j] = probs
    else:  # polyseqmo
        dec_state = z_top
        x_col = np.zeros((b, 1))
        for j, head in enumerate(model.heads):
            dec_state = gru_cell_forward(x_col, dec_state, model.decoder)
            probs = softmax(affine_forward(dec_state, head))
            w = bin_to_value(np.argmax(probs, axis=-1), model.coeff_bins[j])
            coeffs[:, j] = w
            if collect_dists:
                coeff_dists[j] = probs
            x_col = _coeff_feedback(model, w, j)[:, None]

    basis = np.vander(np.arange(h, dtype=float), n_coeff, increasing=True)
    values = coeffs @ basis.T
    extras["raw_values"] = values
    values = np.clip(values, model.value_bins.min_value, model.value_bins.max_value)
    extras["coeffs"] = coeffs
    if collect_dists:
        # bins usually share a width; fall back to a ragged list otherwise
        if len({d.shape[1] for d in coeff_dists}) == 1:
            extras["coeff_dists"] = np.stack(coeff_dists)
        else:
            extras["coeff_dists"] = coeff_dists
    return values, extras


def forecast(model: ForecasterModel, history) -> Forecast:
    """Forecast the next ``model.horizon`` values from one history."""
    history = model.clip_history(history)
    x = model.normalize(history)[None, :]
    values, extras = _forecast_block(model, x, history[-1:], collect_dists=True)
    cd = extras.get("coeff_dists")
    if cd is not None:
        cd = cd[:, 0] if isinstance(cd, np.ndarray) else [d[0] for d in cd]
    return Forecast(
        values=values[0],
        step_dists=extras.get("step_dists", [None])[0] if "step_dists" in extras else None,
        coeff_dists=cd,
        coeffs=PolyCoeffs(extras["coeffs"][0]) if "coeffs" in extras else None,
    )


def forecast_batch(model: ForecasterModel, histories) -> np.ndarray:
    """Forecast many histories at once; returns an (n, horizon) matrix.

    Histories are bucketed by (clipped) length so each bucket runs as one
    vectorized unroll; results come back in input order.
    """
    clipped = [model.clip_history(h) for h in histories]
    out = np.empty((len(clipped), model.horizon))
    buckets = {}
    for i, hist in enumerate(clipped):
        buckets.setdefault(len(hist), []).append(i)
    for length in sorted(buckets):
        idx = buckets[length]
        block = np.stack([clipped[i] for i in idx])
        values, _ = _forecast_block(model, model.normalize(block), block[:, -1])
        out[idx] = values
    return out


def ensemble_mean(forecasts: list) -> Forecast:
    """Elementwise mean of forecast values across ensemble members."""
    if not forecasts:
        raise ValueError("cannot ensemble an empty forecast list")
    lengths = {len(f.values) for f in forecasts}
    if len(lengths) != 1:
        raise ValueError(f"forecasts disagree on horizon: {sorted(lengths)}")
    return Forecast(values=np.mean([f.values for f in forecasts], axis=0))


class MeanEnsemble:
    """Forecast-averaging wrapper satisfying the same forecast contract."""

    def __init__(self, members: list):
        if not members:
            raise ValueError("ensemble needs at least one member")
        horizons = {m.horizon for m in members}
        if len(horizons) != 1:
            raise ValueError("ensemble members disagree on horizon")
        self.members = members
        self.horizon = members[0].horizon
        self.value_bins = members[0].value_bins

    def forecast(self, history) -> Forecast:
        return ensemble_mean([forecast(m, history) for m in self.members])

    def forecast_batch(self, histories) -> np.ndarray:
        return np.mean([forecast_batch(m, histories) for m in self.members], axis=0)


def save_model(model: ForecasterModel, path):
    """Write a versioned JSON checkpoint (layout documented in the README)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": model.architecture,
        "horizon": model.horizon,
        "degree": model.degree,
        "hidden_size": model.hidden_size,
        "num_layers": len(model.encoder),
        "normalization": model.normalization,
        "norm_mean": model.norm_mean,
        "norm_std": model.norm_std,
        "decoder_feedback": model.decoder_feedback,
        "max_history": model.max_history,
        "value_bins": model.value_bins.to_dict(),
        "coeff_bins": [b.to_dict() for b in model.coeff_bins] if model.coeff_bins else None,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in model.params().items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_model(path) -> ForecasterModel:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    coeff_bins = (
        [BinSpec.from_dict(d) for d in payload["coeff_bins"]]
        if payload.get("coeff_bins")
        else None
    )
    model = create_model(
        payload["architecture"],
        hidden_size=payload["hidden_size"],
        num_layers=payload["num_layers"],
        horizon=payload["horizon"],
        degree=payload["degree"],
        value_bins=BinSpec.from_dict(payload["value_bins"]),
        coeff_bins=coeff_bins,
        normalization=payload["normalization"],
        norm_mean=payload["norm_mean"],
        norm_std=payload["norm_std"],
        decoder_feedback=payload["decoder_feedback"],
        max_history=payload["max_history"],
        seed=0,
    )
    stored = {
        name: np.asarray(spec["data"], dtype=float).reshape(spec["shape"])
        for name, spec in payload["params"].items()
    }
    model.set_params(stored)
    return model
