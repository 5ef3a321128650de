"""Discretization of real signal values into equal-width categorical bins.

Glucose values and polynomial coefficients are trained as 361-class
classification targets; this module owns the mapping in both directions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BINS = 361

# CGM sensors report integers in 40..400 mg/dL; 361 bins of width 1 cover
# every representable value exactly.
GLUCOSE_MIN = 40.0
GLUCOSE_MAX = 400.0


@dataclass(frozen=True)
class BinSpec:
    """Equal-width binning of [min_value, max_value] into n_bins classes.

    Bin k is centered on ``min_value + k * width`` with
    ``width = (max_value - min_value) / (n_bins - 1)``, so both range
    endpoints are bin centers.
    """

    min_value: float
    max_value: float
    n_bins: int = N_BINS

    def __post_init__(self):
        if not self.min_value < self.max_value:
            raise ValueError(
                f"min_value must be < max_value, got [{self.min_value}, {self.max_value}]"
            )
        if self.n_bins < 2:
            raise ValueError(f"need at least 2 bins, got {self.n_bins}")

    @property
    def width(self) -> float:
        return (self.max_value - self.min_value) / (self.n_bins - 1)

    def to_dict(self) -> dict:
        return {
            "min_value": self.min_value,
            "max_value": self.max_value,
            "n_bins": self.n_bins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinSpec":
        return cls(float(d["min_value"]), float(d["max_value"]), int(d["n_bins"]))


def glucose_bins() -> BinSpec:
    """The fixed sensor-range spec used for all value heads."""
    return BinSpec(GLUCOSE_MIN, GLUCOSE_MAX, N_BINS)


def value_to_bin(v, spec: BinSpec):
    """Map value(s) to the nearest bin center's index.

    Out-of-range values clamp to the first/last bin. Accepts scalars or
    arrays and returns the matching shape.
    """
    k = np.floor((np.asarray(v, dtype=float) - spec.min_value) / spec.width + 0.5)
    k = np.clip(k, 0, spec.n_bins - 1).astype(np.int64)
    return k if k.ndim else int(k)


def bin_to_value(k, spec: BinSpec):
    """Center value of bin ``k``; inverse of value_to_bin on bin centers."""
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr >= spec.n_bins):
        raise IndexError(f"bin index out of range [0, {spec.n_bins}): {k}")
    v = spec.min_value + k_arr.astype(float) * spec.width
    return v if v.ndim else float(v)


def dist_argmax_value(probs, spec: BinSpec):
    """Decode a categorical distribution to the value of its modal bin.

    Ties break toward the lower index (np.argmax convention), which keeps
    decoding deterministic.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != spec.n_bins:
        raise ValueError(f"distribution over {probs.shape[-1]} classes, spec has {spec.n_bins}")
    return bin_to_value(np.argmax(probs, axis=-1), spec)


def coeff_bin_specs(training_windows, degree: int) -> list[BinSpec]:
    """Per-coefficient BinSpecs from best-fit polynomials over training targets.

    Each target window is fit with a degree-``degree`` polynomial and the
    observed min/max of every coefficient defines its bin range. The bias
    coefficient range is clamped into the sensor range [40, 400]. Degenerate
    ranges (max == min) are widened symmetrically so binning stays defined.
    """
    from .polyfit import fit_poly

    if len(training_windows) < 2:
        raise ValueError("need at least 2 training windows to derive coefficient ranges")
    coeffs = np.empty((len(training_windows), degree + 1))
    for i, w in enumerate(training_windows):
        target = w.target if hasattr(w, "target") else np.asarray(w, dtype=float)
        coeffs[i] = fit_poly(target, degree).coeffs
    lo = coeffs.min(axis=0)
    hi = coeffs.max(axis=0)
    lo[0] = min(max(lo[0], GLUCOSE_MIN), GLUCOSE_MAX)
    hi[0] = min(max(hi[0], GLUCOSE_MIN), GLUCOSE_MAX)
    specs = []
    for j in range(degree + 1):
        a, b = float(lo[j]), float(hi[j])
        if a == b:
            pad = max(1e-6, 1e-3 * abs(a))
            a, b = a - pad, b + pad
        specs.append(BinSpec(a, b, N_BINS))
    return specs
