"""CGM data handling: CSV ingestion, artifact filtering, session splits,
sliding-window extraction, event tagging, and a synthetic generator.

A recording session is a maximal run of uniform 5-minute samples; any gap
splits it. All downstream sets (train/validation/test) are built from whole
sessions so no window ever crosses a recording boundary.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

SAMPLE_PERIOD = timedelta(minutes=5)
SAMPLES_PER_DAY = 288

VALUE_MIN = 40
VALUE_MAX = 400

# Normal glycemic band; windows leaving it define hypo/hyper onset events.
NORMAL_LOW = 70.0
NORMAL_HIGH = 180.0

# Adjacent-sample jumps above this are treated as sensor artifacts.
ARTIFACT_JUMP = 40

CSV_HEADER = ["patient_id", "session_id", "timestamp_iso8601", "glucose_mgdl"]


class DataError(ValueError):
    """Malformed input data; message carries the offending CSV line."""


@dataclass
class GlucoseSeries:
    """One uninterrupted stretch of 5-minute CGM samples."""

    patient_id: str
    session_id: str
    start_time: datetime
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if len(self.values) < 1:
            raise DataError("series must contain at least one value")
        if self.values.min() < VALUE_MIN or self.values.max() > VALUE_MAX:
            bad = self.values[(self.values < VALUE_MIN) | (self.values > VALUE_MAX)][0]
            raise DataError(
                f"glucose value {bad} outside sensor range [{VALUE_MIN}, {VALUE_MAX}] "
                f"(patient {self.patient_id}, session {self.session_id})"
            )

    def __len__(self):
        return len(self.values)


@dataclass
class Window:
    """One forecasting sample: history prefix plus the next-h target slice."""

    input: np.ndarray
    target: np.ndarray
    patient_id: str
    session_id: str
    offset: int
    is_event: bool = False
    is_hypo_onset: bool = False
    is_hyper_onset: bool = False


@dataclass
class SplitSet:
    """Per-patient session split: test = last session, validation = second
    to last, train = the rest."""

    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


def load_csv(path) -> list[GlucoseSeries]:
    """Read the documented CSV schema into per-session series.

    Rows are grouped by (patient, session) and sorted by timestamp; a gap
    longer than one sample period starts a new series. Duplicate or
    sub-period timestamps and malformed fields raise DataError naming the
    line.
    """
    rows = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            pid, sid, ts_str, val_str = (c.strip() for c in row)
            try:
                ts = datetime.fromisoformat(ts_str)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: bad timestamp {ts_str!r}: {e}") from None
            try:
                val_f = float(val_str)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad glucose value {val_str!r}") from None
            if not val_f.is_integer():
                raise DataError(f"{path}:{lineno}: glucose must be integer mg/dL, got {val_str}")
            val = int(val_f)
            if not VALUE_MIN <= val <= VALUE_MAX:
                raise DataError(
                    f"{path}:{lineno}: glucose value {val} outside sensor range "
                    f"[{VALUE_MIN}, {VALUE_MAX}]"
                )
            rows.setdefault((pid, sid), []).append((ts, val, lineno))

    series = []
    for (pid, sid), samples in sorted(rows.items()):
        samples.sort(key=lambda s: s[0])
        start = 0
        for i in range(1, len(samples) + 1):
            if i < len(samples):
                dt = samples[i][0] - samples[i - 1][0]
                if dt == SAMPLE_PERIOD:
                    continue
                if dt <= timedelta(0):
                    raise DataError(
                        f"{path}:{samples[i][2]}: duplicate timestamp {samples[i][0]} "
                        f"in session {sid}"
                    )
                if dt < SAMPLE_PERIOD:
                    raise DataError(
                        f"{path}:{samples[i][2]}: sample interval {dt} is below the "
                        f"5-minute period in session {sid}"
                    )
            # gap (or end of data): close the current segment
            seg = samples[start:i]
            series.append(
                GlucoseSeries(pid, sid, seg[0][0], np.array([s[1] for s in seg]))
            )
            start = i
    return series


def write_csv(series_list, path):
    """Write series back out in the documented CSV schema."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for s in sorted(series_list, key=lambda s: (s.patient_id, s.session_id, s.start_time)):
            for i, v in enumerate(s.values):
                ts = s.start_time + i * SAMPLE_PERIOD
                writer.writerow([s.patient_id, s.session_id, ts.isoformat(), int(v)])


def filter_artifacts(series: GlucoseSeries) -> list[GlucoseSeries]:
    """Split a series wherever adjacent samples jump more than 40 mg/dL.

    The offending transition is discarded by the split itself; both sides
    are kept as independent series.
    """
    vals = series.values
    breaks = np.flatnonzero(np.abs(np.diff(vals.astype(np.int64))) > ARTIFACT_JUMP) + 1
    if len(breaks) == 0:
        return [series]
    out = []
    edges = [0, *breaks.tolist(), len(vals)]
    for a, b in zip(edges[:-1], edges[1:]):
        out.append(
            replace(series, start_time=series.start_time + a * SAMPLE_PERIOD, values=vals[a:b])
        )
    return out


def split_by_session(all_series) -> SplitSet:
    """Assign whole sessions per patient: last to test, second to last to
    validation, the rest to train. Patients with fewer than three sessions
    fill test first, then validation."""
    by_patient = {}
    for s in all_series:
        by_patient.setdefault(s.patient_id, {}).setdefault(s.session_id, []).append(s)

    splits = SplitSet()
    for pid in sorted(by_patient):
        sessions = by_patient[pid]
        # order sessions chronologically by their earliest segment
        ordered = sorted(sessions, key=lambda sid: (min(s.start_time for s in sessions[sid]), sid))
        buckets = [splits.test, splits.validation]
        for rank, sid in enumerate(reversed(ordered)):
            dest = buckets[rank] if rank < 2 else splits.train
            dest.extend(sorted(sessions[sid], key=lambda s: s.start_time))
    splits.train.sort(key=lambda s: (s.patient_id, s.start_time))
    return splits


def event_flags(last_input: float, target) -> tuple[bool, bool, bool]:
    """(is_event, hypo_onset, hyper_onset) for one window.

    Onsets require the last observed value to be in the normal 70-180
    band and the target window to cross below 70 (hypo) or above 180
    (hyper)."""
    target = np.asarray(target)
    normal_start = NORMAL_LOW <= last_input <= NORMAL_HIGH
    hypo = bool(normal_start and np.any(target < NORMAL_LOW))
    hyper = bool(normal_start and np.any(target > NORMAL_HIGH))
    return hypo or hyper, hypo, hyper


def tag_events(window: Window) -> Window:
    """Fill the event flags of a window in place (and return it)."""
    window.is_event, window.is_hypo_onset, window.is_hyper_onset = event_flags(
        float(window.input[-1]), window.target
    )
    return window


def make_windows(series: GlucoseSeries, min_history: int = 10, horizon: int = 6,
                 stride: int = 1) -> list[Window]:
    """Stride-1 sliding windows with full-prefix inputs.

    One window per offset t in [min_history-1, len-horizon-1]; the input is
    the whole prefix up to t (a view, so this is cheap) and the target the
    next ``horizon`` values. Series too short yield an empty list.
    """
    vals = series.values
    n = len(vals)
    windows = []
    for t in range(min_history - 1, n - horizon, stride):
        w = Window(
            input=vals[: t + 1],
            target=vals[t + 1 : t + 1 + horizon],
            patient_id=series.patient_id,
            session_id=series.session_id,
            offset=t,
        )
        windows.append(tag_events(w))
    return windows


def windows_from_series(series_list, min_history: int = 10, horizon: int = 6,
                        stride: int = 1) -> list[Window]:
    """Windows over many series, ordered by (patient, session, offset)."""
    out = []
    for s in sorted(series_list, key=lambda s: (s.patient_id, s.session_id, s.start_time)):
        out.extend(make_windows(s, min_history, horizon, stride))
    return out


@dataclass
class SynthConfig:
    """Knobs for the synthetic CGM generator.

    Not a physiological model: it exists to exercise the pipeline with
    learnable nonlinear dynamics (meal excursions, circadian drift,
    correlated sensor noise) inside realistic ranges.
    """

    patients: int = 20
    sessions_per_patient: int = 4
    days_per_session: float = 2.0
    meals_per_day: float = 3.0
    meal_rise_min: float = 40.0
    meal_rise_max: float = 150.0
    noise_sigma: float = 2.0
    noise_rho: float = 0.6
    circadian_max: float = 12.0
    start_date: datetime = field(default_factory=lambda: datetime(2024, 1, 1))
    session_gap_days: int = 90

    def __post_init__(self):
        if self.patients < 1 or self.sessions_per_patient < 1 or self.days_per_session <= 0:
            raise ValueError("synthetic config needs >=1 patient/session and positive days")


def synth_generate(config: SynthConfig, seed: int) -> list[GlucoseSeries]:
    """Deterministic synthetic CGM sessions.

    Per patient: a constant baseline in [90, 140], randomly timed bell-shaped
    meal excursions with a slower decay and a shallow post-meal undershoot,
    sinusoidal circadian drift, and AR(1) sensor noise. Values are rounded
    to integers and clamped to the sensor range. Default parameters keep
    every adjacent step within the 40 mg/dL artifact threshold.
    """
    rng = np.random.default_rng(seed)
    n = int(round(config.days_per_session * SAMPLES_PER_DAY))
    series = []
    for p in range(config.patients):
        baseline = rng.uniform(90.0, 140.0)
        circ_amp = rng.uniform(0.3, 1.0) * config.circadian_max
        circ_phase = rng.uniform(0.0, 24.0)
        for s in range(config.sessions_per_patient):
            hours = np.arange(n) * (5.0 / 60.0)
            signal = np.full(n, baseline)
            signal += circ_amp * np.sin(2.0 * np.pi * (hours + circ_phase) / 24.0)

            n_meals = rng.poisson(config.meals_per_day * config.days_per_session)
            for _ in range(n_meals):
                peak_t = rng.uniform(0.0, hours[-1]) if n > 1 else 0.0
                amp = rng.uniform(config.meal_rise_min, config.meal_rise_max)
                rise_h = rng.uniform(1.0, 3.0)
                sig_rise = rise_h / 3.0
                sig_fall = sig_rise * rng.uniform(1.5, 2.5)
                d = hours - peak_t
                bump = np.where(
                    d < 0,
                    amp * np.exp(-0.5 * (d / sig_rise) ** 2),
                    amp * np.exp(-0.5 * (d / sig_fall) ** 2),
                )
                # post-meal correction dips slightly below baseline
                undershoot = 0.12 * amp * np.exp(
                    -0.5 * ((d - 2.5 * sig_fall) / (2.0 * sig_fall)) ** 2
                )
                signal += bump - undershoot

            if config.noise_sigma > 0:
                rho = config.noise_rho
                innov = rng.normal(0.0, 1.0, size=n)
                noise = np.empty(n)
                noise[0] = innov[0] * config.noise_sigma
                scale = config.noise_sigma * np.sqrt(max(1.0 - rho * rho, 0.0))
                for i in range(1, n):
                    noise[i] = rho * noise[i - 1] + scale * innov[i]
                signal += noise

            values = np.clip(np.round(signal), VALUE_MIN, VALUE_MAX).astype(np.int64)
            start = config.start_date + timedelta(days=config.session_gap_days * s)
            series.append(GlucoseSeries(f"p{p:03d}", f"s{s:02d}", start, values))
    return series
