"""Shallow comparators: linear extrapolation and random forests.

The forests are plain CART regression trees grown on raw lag windows,
in recursive (single-step, composed) and true multi-output flavors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .quantize import GLUCOSE_MAX, GLUCOSE_MIN

EXTRAPOLATE_POINTS = 6
FOREST_FORMAT = "glucast-forest"
FOREST_VERSION = 1


def linear_extrapolate(history, horizon: int = 6) -> np.ndarray:
    """Continue the least-squares line through the last six samples.

    The line is fit on abscissae 0..5 and evaluated at 6..6+horizon-1,
    clamped to the sensor range.
    """
    history = np.asarray(history, dtype=float)
    if history.ndim != 1 or len(history) < EXTRAPOLATE_POINTS:
        raise ValueError(f"need at least {EXTRAPOLATE_POINTS} history samples")
    tail = history[-EXTRAPOLATE_POINTS:]
    t = np.arange(EXTRAPOLATE_POINTS, dtype=float)
    slope, intercept = np.polyfit(t, tail, 1)
    future = np.arange(EXTRAPOLATE_POINTS, EXTRAPOLATE_POINTS + horizon, dtype=float)
    return np.clip(intercept + slope * future, GLUCOSE_MIN, GLUCOSE_MAX)


@dataclass
class RegressionTree:
    """Array-encoded binary CART tree.

    Internal nodes carry (feature, threshold) and two children; leaves
    carry the mean target vector of their training rows. ``feature`` is
    -1 at leaves and children indices are -1 there too.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int | None
    min_samples_leaf: int

    @property
    def out_dim(self) -> int:
        return self.value.shape[1]

    def predict_row(self, x: np.ndarray) -> np.ndarray:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return self.value[i]


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exhaustive scan for the split minimizing summed child SSE.

    Returns (feature, threshold, left_mask) or None when no admissible
    split exists. SSE is totalled across target dimensions, so the
    multi-output case reduces dispersion jointly.
    """
    m = x.shape[0]
    if m < 2 * min_leaf:
        return None
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    ys = y[order]                      # (m, n_features, out_dim)
    c1 = np.cumsum(ys, axis=0)
    c2 = np.cumsum(ys * ys, axis=0)
    sizes = np.arange(1, m, dtype=float)[:, None, None]
    left_sse = (c2[:-1] - c1[:-1] ** 2 / sizes).sum(axis=2)
    r1 = c1[-1] - c1[:-1]
    r2 = c2[-1] - c2[:-1]
    right_sse = (r2 - r1**2 / (m - sizes)).sum(axis=2)
    score = left_sse + right_sse
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        n_left = np.arange(1, m)[:, None]
        valid = valid & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score))
    if not np.isfinite(score.flat[flat]):
        return None
    pos, feat = np.unravel_index(flat, score.shape)
    threshold = 0.5 * (xs[pos, feat] + xs[pos + 1, feat])
    left_mask = x[:, feat] <= threshold
    k = int(left_mask.sum())
    if k == 0 or k == m:                       # midpoint rounding collapse guard
        return None
    return int(feat), float(threshold), left_mask


def grow_tree(x: np.ndarray, y: np.ndarray, max_depth=None, min_samples_leaf: int = 1) -> RegressionTree:
    """Grow one CART regression tree on rows (x) and target vectors (y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if len(x) == 0:
        raise ValueError("cannot grow a tree from an empty training set")
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(y[rows].mean(axis=0))
        return len(feature) - 1

    all_rows = np.arange(len(x))
    root = new_node(all_rows)
    stack = [(root, all_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        yr = y[rows]
        if (yr == yr[0]).all():
            continue
        split = _best_split(x[rows], yr, min_samples_leaf)
        if split is None:
            continue
        feat, thresh, mask = split
        feature[node] = feat
        threshold[node] = thresh
        lid = new_node(rows[mask])
        rid = new_node(rows[~mask])
        left[node] = lid
        right[node] = rid
        stack.append((rid, rows[~mask], depth + 1))
        stack.append((lid, rows[mask], depth + 1))
    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
    )


@dataclass
class RandomForest:
    """Bootstrap-aggregated regression trees over fixed-length lag windows."""

    trees: list
    n_estimators: int
    input_len: int
    seed: int

    def __post_init__(self):
        if self.n_estimators < 1 or len(self.trees) != self.n_estimators:
            raise ValueError("forest needs n_estimators >= 1 trees")
        dims = {t.out_dim for t in self.trees}
        if len(dims) != 1:
            raise ValueError(f"trees disagree on payload dimension: {sorted(dims)}")

    @property
    def out_dim(self) -> int:
        return self.trees[0].out_dim

    @property
    def multi_output(self) -> bool:
        return self.out_dim > 1


def rf_fit(windows, n_estimators: int = 100, input_len: int = 10,
           multi_output: bool = False, seed: int = 0,
           max_depth=None, min_samples_leaf: int = 1) -> RandomForest:
    """Fit a forest on training windows.

    Rows are the last ``input_len`` raw input values; targets are the
    full window target (multi-output) or just its first step (the
    single-step forest later composed recursively).
    """
    windows = list(windows)
    if not windows:
        raise ValueError("cannot fit a forest on an empty training set")
    for w in windows:
        if len(w.input) < input_len:
            raise ValueError(f"window history shorter than input_len={input_len}")
    x = np.stack([np.asarray(w.input, dtype=float)[-input_len:] for w in windows])
    if multi_output:
        y = np.stack([np.asarray(w.target, dtype=float) for w in windows])
    else:
        y = np.array([[float(w.target[0])] for w in windows])
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_estimators):
        rows = rng.integers(0, len(x), size=len(x))
        trees.append(grow_tree(x[rows], y[rows], max_depth, min_samples_leaf))
    return RandomForest(trees=trees, n_estimators=n_estimators, input_len=input_len, seed=seed)


def rf_predict(forest: RandomForest, history, horizon: int = 6) -> np.ndarray:
    """Forecast ``horizon`` values from the trailing lag window.

    Multi-output forests emit their payload mean directly; single-step
    forests are applied recursively, feeding each prediction back in.
    """
    history = np.asarray(history, dtype=float)
    if history.ndim != 1 or len(history) < forest.input_len:
        raise ValueError(f"need at least {forest.input_len} history samples")
    window = history[-forest.input_len:]
    if forest.multi_output:
        if forest.out_dim != horizon:
            raise ValueError(f"forest predicts {forest.out_dim} steps, asked for {horizon}")
        return np.mean([t.predict_row(window) for t in forest.trees], axis=0)
    out = np.empty(horizon)
    window = window.copy()
    for i in range(horizon):
        step = np.mean([t.predict_row(window) for t in forest.trees], axis=0)[0]
        out[i] = step
        window[:-1] = window[1:]
        window[-1] = step
    return out


def save_forest(forest: RandomForest, path):
    payload = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "n_estimators": forest.n_estimators,
        "input_len": forest.input_len,
        "seed": forest.seed,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "max_depth": t.max_depth,
                "min_samples_leaf": t.min_samples_leaf,
            }
            for t in forest.trees
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_forest(path) -> RandomForest:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != FOREST_FORMAT:
        raise ValueError(f"{path}: not a {FOREST_FORMAT} file")
    if payload.get("version") != FOREST_VERSION:
        raise ValueError(f"{path}: unsupported forest version {payload.get('version')}")
    trees = [
        RegressionTree(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            max_depth=d["max_depth"],
            min_samples_leaf=d["min_samples_leaf"],
        )
        for d in payload["trees"]
    ]
    return RandomForest(
        trees=trees,
        n_estimators=payload["n_estimators"],
        input_len=payload["input_len"],
        seed=payload["seed"],
    )
