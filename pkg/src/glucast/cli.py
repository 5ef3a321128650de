"""Batch command line: generate, train, evaluate, sweep-bw, forecast.

Every command is driven by a flat key-value config file plus --seed and
--out flags, and is deterministic given (config, seed).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys

import numpy as np

from .baselines import linear_extrapolate, rf_fit, rf_predict
from .config import (ConfigError, get_bool, get_float, get_float_list, get_int,
                     get_optional_int, get_str, get_str_list, load_config)
from .data import DataError, SynthConfig, filter_artifacts, load_csv, split_by_session, \
    synth_generate, windows_from_series, write_csv
from .evaluate import config_digest, evaluate, write_per_step_csv, write_reports_json, \
    write_table_csv
from .models import ARCHITECTURES, MeanEnsemble, forecast, load_model, save_model
from .plots import plot_loss_curves, plot_medians, plot_per_step, plot_series, plot_sweep
from .polyfit import smooth_predictions
from .quantize import GLUCOSE_MAX, GLUCOSE_MIN, glucose_bins
from .train import TrainConfig, TrainingDivergedError, train_model

MODEL_ORDER = (
    "extrapolation", "rf_recursive", "rf_multioutput",
    "recursive", "deepmo", "seqmo", "polymo", "polyseqmo", "ensemble",
)
NORMALIZATIONS = ("none", "divide", "standardize")


def _synth_config(cfg) -> SynthConfig:
    sc = SynthConfig(
        patients=get_int(cfg, "patients", 20),
        sessions_per_patient=get_int(cfg, "sessions_per_patient", 4),
        days_per_session=get_float(cfg, "days_per_session", 2.0),
        meals_per_day=get_float(cfg, "meals_per_day", 3.0),
        meal_rise_min=get_float(cfg, "meal_rise_min", 40.0),
        meal_rise_max=get_float(cfg, "meal_rise_max", 150.0),
        noise_sigma=get_float(cfg, "noise_sigma", 2.0),
        noise_rho=get_float(cfg, "noise_rho", 0.6),
        circadian_max=get_float(cfg, "circadian_max", 12.0),
    )
    if sc.patients < 1 or sc.sessions_per_patient < 1:
        raise ConfigError("patients and sessions_per_patient must be >= 1")
    return sc


def cmd_generate(cfg, seed, out):
    sc = _synth_config(cfg)
    series = synth_generate(sc, seed)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, get_str(cfg, "dataset_filename", "synthetic.csv"))
    write_csv(series, path)
    plot_series(series[0], os.path.join(out, "series_preview.png"))
    total = sum(len(s.values) for s in series)
    print(f"wrote {path}: {sc.patients} patients, {len(series)} sessions, {total} samples")


def _load_series(cfg):
    series = load_csv(get_str(cfg, "data"))
    if get_bool(cfg, "artifact_filter", True):
        series = [seg for s in series for seg in filter_artifacts(s)]
    return series


def _train_config(cfg, seed, architecture=None) -> TrainConfig:
    arch = architecture or get_str(cfg, "architecture")
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}, expected one of {ARCHITECTURES}")
    norm = get_str(cfg, "normalization", "divide")
    if norm not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization {norm!r}, expected one of {NORMALIZATIONS}")
    return TrainConfig(
        architecture=arch,
        horizon=get_int(cfg, "horizon", 6),
        degree=get_int(cfg, "degree", 1),
        hidden_size=get_int(cfg, "hidden_size", 64),
        num_layers=get_int(cfg, "num_layers", 2),
        learning_rate=get_float(cfg, "learning_rate", 1e-3),
        weight_decay=get_float(cfg, "weight_decay", 1e-5),
        batch_size=get_int(cfg, "batch_size", 64),
        patience=get_int(cfg, "patience", 50),
        max_epochs=get_int(cfg, "max_epochs", 500),
        b_w=get_float(cfg, "b_w", 1.0),
        normalization=norm,
        decoder_feedback=get_bool(cfg, "decoder_feedback", True),
        min_history=get_int(cfg, "min_history", 10),
        max_history=get_optional_int(cfg, "max_history", 24),
        max_train_windows=get_optional_int(cfg, "max_train_windows", None),
        max_val_windows=get_optional_int(cfg, "max_val_windows", None),
        seed=seed,
    )


def _write_train_report(report, out):
    # wall clock is intentionally left out of the artifact so repeated
    # runs stay byte-identical; it is printed to stdout instead
    payload = report.to_dict()
    payload.pop("wall_clock_sec")
    path = os.path.join(out, "train_report.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def cmd_train(cfg, seed, out):
    tc = _train_config(cfg, seed)
    splits = split_by_session(_load_series(cfg))
    model, report = train_model(tc, splits)
    os.makedirs(out, exist_ok=True)
    ckpt_name = get_str(cfg, "checkpoint_filename", f"{tc.architecture}_model.json")
    save_model(model, os.path.join(out, ckpt_name))
    report.checkpoint_path = ckpt_name
    _write_train_report(report, out)
    plot_loss_curves(report, os.path.join(out, "train_loss.png"))
    print(
        f"{tc.architecture}: {report.epochs} epochs, best epoch {report.best_epoch} "
        f"(val loss {report.best_val_loss:.4f}, val APE {report.val_ape[report.best_epoch]:.2f}%) "
        f"in {report.wall_clock_sec:.1f}s -> {ckpt_name}"
    )


def _ordered(entries):
    rank = {name: i for i, name in enumerate(MODEL_ORDER)}
    return sorted(entries, key=lambda e: rank.get(e[0].split("_v")[0], len(rank)))


def _load_checkpoint(path, horizon):
    model = load_model(path)
    if model.value_bins != glucose_bins():
        raise DataError(
            f"checkpoint {path}: value bins {model.value_bins} do not match "
            f"the dataset range [{GLUCOSE_MIN}, {GLUCOSE_MAX}]"
        )
    if model.horizon != horizon:
        raise DataError(f"checkpoint {path}: horizon {model.horizon} != configured {horizon}")
    return model


def cmd_evaluate(cfg, seed, out):
    splits = split_by_session(_load_series(cfg))
    min_history = get_int(cfg, "min_history", 10)
    horizon = get_int(cfg, "horizon", 6)
    test_windows = windows_from_series(splits.test, min_history=min_history, horizon=horizon)
    if not test_windows:
        raise DataError("test split produced no evaluation windows")
    smoothing = get_optional_int(cfg, "smoothing_degree", 1)
    digest = config_digest({**cfg, "seed": seed})

    entries = []
    if get_bool(cfg, "include_extrapolation", True):
        entries.append(("extrapolation", lambda h: linear_extrapolate(h, horizon)))
    if get_bool(cfg, "include_rf", True):
        rf_len = get_int(cfg, "rf_input_len", 10)
        if rf_len > min_history:
            raise ConfigError(f"rf_input_len {rf_len} exceeds min_history {min_history}")
        train_windows = windows_from_series(
            splits.train, min_history=min_history, horizon=horizon
        )
        cap = get_optional_int(cfg, "rf_max_train_windows", None)
        if cap is not None and len(train_windows) > cap:
            rng = np.random.default_rng(seed)
            keep = np.sort(rng.choice(len(train_windows), size=cap, replace=False))
            train_windows = [train_windows[i] for i in keep]
        kw = {
            "n_estimators": get_int(cfg, "rf_estimators", 100),
            "input_len": rf_len,
            "max_depth": get_optional_int(cfg, "rf_max_depth", None),
            "min_samples_leaf": get_int(cfg, "rf_min_samples_leaf", 1),
        }
        rec_forest = rf_fit(train_windows, multi_output=False, seed=seed, **kw)
        mo_forest = rf_fit(train_windows, multi_output=True, seed=seed + 1, **kw)
        entries.append(("rf_recursive", lambda h: rf_predict(rec_forest, h, horizon)))
        entries.append(("rf_multioutput", lambda h: rf_predict(mo_forest, h, horizon)))

    seen = {}
    for path in get_str_list(cfg, "checkpoints", []):
        model = _load_checkpoint(path, horizon)
        name = model.architecture
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name}_v{seen[name]}"
        entries.append((name, model))
    ensemble_paths = get_str_list(cfg, "ensemble", [])
    if ensemble_paths:
        members = [_load_checkpoint(p, horizon) for p in ensemble_paths]
        entries.append(("ensemble", MeanEnsemble(members)))
    if not entries:
        raise ConfigError("nothing to evaluate: enable baselines or list checkpoints")

    reports = [
        evaluate(model, test_windows, smoothing_degree=smoothing,
                 model_id=name, config_hash=digest)
        for name, model in _ordered(entries)
    ]
    os.makedirs(out, exist_ok=True)
    write_reports_json(reports, os.path.join(out, "eval_report.json"))
    write_table_csv(reports, os.path.join(out, "eval_table.csv"))
    write_per_step_csv(reports, os.path.join(out, "per_step.csv"))
    plot_per_step(reports, os.path.join(out, "per_step.png"))
    plot_medians(reports, os.path.join(out, "median_ape.png"))
    print(_format_table(reports))


def _format_table(reports) -> str:
    def cell(stats):
        if not stats.count:
            return "-"
        return f"{stats.median:.2f} ({stats.p2_5:.2f}-{stats.p97_5:.2f})"

    headers = ["model", "full", "event", "hypo", "hyper"]
    rows = [
        [r.model_id] + [cell(r.subsets[s]) for s in ("full", "event", "hypo", "hyper")]
        for r in reports
    ]
    widths = [max(len(str(row[i])) for row in [headers] + rows) for i in range(len(headers))]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(row, widths))
             for row in [headers] + rows]
    return "\n".join(lines)


def cmd_sweep_bw(cfg, seed, out):
    bw_values = get_float_list(cfg, "bw_values")
    if not bw_values:
        raise ConfigError("bw_values must list at least one value")
    splits = split_by_session(_load_series(cfg))
    horizon = get_int(cfg, "horizon", 6)
    min_history = get_int(cfg, "min_history", 10)
    test_windows = windows_from_series(splits.test, min_history=min_history, horizon=horizon)
    if not test_windows:
        raise DataError("test split produced no evaluation windows")
    digest = config_digest({**cfg, "seed": seed})
    rows = []
    for b_w in bw_values:
        tc = _train_config({**cfg, "b_w": repr(b_w)}, seed, architecture="seqmo")
        model, report = train_model(tc, splits)
        result = evaluate(model, test_windows, smoothing_degree=None,
                          model_id=f"seqmo_bw_{b_w}", config_hash=digest)
        rows.append({
            "b_w": b_w,
            "step_weights": report.step_weights,
            "step6_mean_ape": result.per_step[-1],
            "full_median_ape": result.subsets["full"].median,
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val_loss,
        })
        print(f"b_w={b_w}: step-6 mean APE {rows[-1]['step6_mean_ape']:.3f}%")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "sweep_bw.json"), "w", encoding="utf-8") as f:
        json.dump({"runs": rows}, f, sort_keys=True, indent=2)
        f.write("\n")
    with open(os.path.join(out, "sweep_bw.csv"), "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["b_w", "step6_mean_ape"])
        for row in rows:
            writer.writerow([repr(row["b_w"]), repr(row["step6_mean_ape"])])
    plot_sweep([r["b_w"] for r in rows], [r["step6_mean_ape"] for r in rows],
               os.path.join(out, "sweep_bw.png"))


def cmd_forecast(cfg, seed, out):
    model = load_model(get_str(cfg, "checkpoint"))
    source = get_str(cfg, "history", "-")
    if source == "-":
        text = sys.stdin.read()
    else:
        with open(source, encoding="utf-8") as f:
            text = f.read()
    tokens = [tok for tok in re.split(r"[\s,]+", text.strip()) if tok]
    if not tokens:
        raise DataError("empty history input")
    try:
        history = [float(tok) for tok in tokens]
    except ValueError:
        raise DataError("history contains a non-numeric token") from None
    values = forecast(model, history).values
    smoothing = get_optional_int(cfg, "smoothing_degree", 1)
    if smoothing is not None:
        values = np.clip(smooth_predictions(values, smoothing), GLUCOSE_MIN, GLUCOSE_MAX)
    for v in values:
        print(repr(float(v)))


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep-bw": cmd_sweep_bw,
    "forecast": cmd_forecast,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="glucast",
        description="Multi-step blood glucose forecasting experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "write a synthetic CGM dataset"),
        ("train", "train one forecaster on a dataset"),
        ("evaluate", "compare checkpoints and baselines on the test split"),
        ("sweep-bw", "train seqmo across loss-weight bases and report step-6 error"),
        ("forecast", "read one history, print the forecast values"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="flat key=value config file")
        p.add_argument("--seed", type=int, metavar="INT", help="overrides the config seed")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else {}
        seed = args.seed if args.seed is not None else get_int(cfg, "seed", 0)
        COMMANDS[args.command](cfg, seed, args.out)
    except (ConfigError, DataError, TrainingDivergedError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
