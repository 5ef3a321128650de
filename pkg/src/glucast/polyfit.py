"""Least-squares polynomial fitting over prediction windows.

Windows are always fit against the integer abscissae 0..h-1, matching how
forecasts index the prediction horizon. Also provides the inference-time
polynomial smoothing applied to forecast vectors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PolyCoeffs:
    """Ascending-degree coefficients: value(t) = c0 + c1*t + ... + cn*t^n."""

    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


def _vander(n_points: int, degree: int) -> np.ndarray:
    return np.vander(np.arange(n_points, dtype=float), degree + 1, increasing=True)


def fit_poly(values, degree: int) -> PolyCoeffs:
    """Least-squares best-fit polynomial of ``degree`` over a value window.

    Abscissae are fixed at 0..len(values)-1. Requires strictly more points
    than the degree, otherwise the system is ill-posed.
    """
    values = np.asarray(values, dtype=float)
    h = len(values)
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    if h < degree + 1:
        raise ValueError(f"cannot fit degree {degree} to a window of {h} values")
    coeffs, *_ = np.linalg.lstsq(_vander(h, degree), values, rcond=None)
    return PolyCoeffs(coeffs)


def eval_poly(c: PolyCoeffs, horizon: int) -> np.ndarray:
    """Evaluate a polynomial at abscissae 0..horizon-1."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    return _vander(horizon, c.degree) @ c.coeffs


def smooth_predictions(preds, degree: int) -> np.ndarray:
    """Project a prediction vector onto the best-fit polynomial of ``degree``."""
    preds = np.asarray(preds, dtype=float)
    return eval_poly(fit_poly(preds, degree), len(preds))


def smoothing_matrix(horizon: int, degree: int) -> np.ndarray:
    """Orthogonal projector P with P @ preds == smooth_predictions(preds).

    Precomputing P lets callers smooth many prediction rows in one matmul.
    """
    if horizon < degree + 1:
        raise ValueError(f"cannot fit degree {degree} to a window of {horizon} values")
    v = _vander(horizon, degree)
    return v @ np.linalg.pinv(v)


def smooth_many(preds: np.ndarray, degree: int) -> np.ndarray:
    """Row-wise polynomial smoothing of an (n, h) prediction matrix."""
    preds = np.asarray(preds, dtype=float)
    return preds @ smoothing_matrix(preds.shape[1], degree).T
