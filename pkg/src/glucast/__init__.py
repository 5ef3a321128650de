"""glucast: multi-step blood glucose forecasting experiments.

Deep forecasters (recursive, multi-output, sequential and polynomial
function variants) trained on discretized CGM signals, plus shallow
baselines, a window-APE evaluation protocol and a batch CLI.
"""
from .baselines import RandomForest, RegressionTree, linear_extrapolate, load_forest, \
    rf_fit, rf_predict, save_forest
from .data import DataError, GlucoseSeries, SplitSet, SynthConfig, Window, \
    filter_artifacts, load_csv, make_windows, split_by_session, synth_generate, \
    tag_events, windows_from_series, write_csv
from .evaluate import EvalReport, SummaryStats, ape_window, evaluate, per_step_errors, \
    summarize
from .models import Forecast, ForecasterModel, MeanEnsemble, create_model, encode, \
    ensemble_mean, forecast, forecast_batch, load_model, save_model
from .polyfit import PolyCoeffs, eval_poly, fit_poly, smooth_many, smooth_predictions
from .quantize import BinSpec, bin_to_value, coeff_bin_specs, dist_argmax_value, \
    glucose_bins, value_to_bin
from .train import TrainConfig, TrainReport, TrainingDivergedError, loss_weights, \
    make_targets, train_model

__version__ = "0.1.0"

__all__ = [
    "ape_window", "BinSpec", "bin_to_value", "coeff_bin_specs", "create_model",
    "DataError", "dist_argmax_value", "encode", "ensemble_mean", "EvalReport",
    "eval_poly", "evaluate", "filter_artifacts", "fit_poly", "Forecast",
    "forecast", "forecast_batch", "ForecasterModel", "GlucoseSeries",
    "glucose_bins", "linear_extrapolate", "load_csv", "load_forest", "load_model",
    "loss_weights", "make_targets", "make_windows", "MeanEnsemble", "per_step_errors",
    "PolyCoeffs", "RandomForest", "RegressionTree", "rf_fit", "rf_predict",
    "save_forest", "save_model", "smooth_many", "smooth_predictions",
    "split_by_session", "SplitSet", "summarize", "SummaryStats", "SynthConfig",
    "synth_generate", "tag_events", "TrainConfig", "train_model",
    "TrainingDivergedError", "TrainReport", "value_to_bin", "Window",
    "windows_from_series", "write_csv",
]
