"""Minimal reverse-mode differentiation over numpy arrays.

Training unrolls each architecture into a static graph of ``Var`` nodes.
Ops are batched (leading batch axis) and the recurrent cell is a single
fused node, so graphs stay small: one node per layer per time step plus a
handful for heads and the loss. ``backward`` walks the graph once and
accumulates gradients into leaf nodes.

Only what the forecasters need is implemented; this is not a
general-purpose autodiff system.
"""
from __future__ import annotations

import numpy as np


class Var:
    """A graph node holding a forward value and (after backward) a gradient."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self._backward = backward

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def _accum(var: Var, g: np.ndarray):
    if var.grad is None:
        var.grad = g.copy()
    else:
        var.grad += g


def _as_value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def matmul(a: Var, b: Var) -> Var:
    out_val = a.value @ b.value

    def bwd(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return Var(out_val, (a, b), bwd)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Var, b: Var) -> Var:
    out_val = a.value + b.value

    def bwd(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return Var(out_val, (a, b), bwd)


def mul(a: Var, b: Var) -> Var:
    out_val = a.value * b.value

    def bwd(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return Var(out_val, (a, b), bwd)


def scale(a: Var, s: float) -> Var:
    def bwd(g):
        _accum(a, g * s)

    return Var(a.value * s, (a,), bwd)


def add_n(vars_: list[Var]) -> Var:
    out_val = sum(v.value for v in vars_)

    def bwd(g):
        for v in vars_:
            _accum(v, g)

    return Var(out_val, tuple(vars_), bwd)


def sigmoid(a: Var) -> Var:
    y = 1.0 / (1.0 + np.exp(-a.value))

    def bwd(g):
        _accum(a, g * y * (1.0 - y))

    return Var(y, (a,), bwd)


def tanh(a: Var) -> Var:
    y = np.tanh(a.value)

    def bwd(g):
        _accum(a, g * (1.0 - y * y))

    return Var(y, (a,), bwd)


def affine(x: Var, w: Var, b: Var) -> Var:
    """x @ w + b, fused into one node."""
    out_val = x.value @ w.value + b.value

    def bwd(g):
        _accum(x, g @ w.value.T)
        _accum(w, x.value.T @ g)
        _accum(b, g.sum(axis=0) if g.ndim > 1 else g)

    return Var(out_val, (x, w, b), bwd)


def gru_step(x, h_prev: Var, p: dict) -> Var:
    """One batched GRU cell step as a single fused node.

    ``p`` maps {"wz","wr","wh","uz","ur","uh","bz","br","bh"} to Vars.
    ``x`` may be a Var or a constant input array of shape (batch, in).
    Convention: h = (1 - z) * h_prev + z * h_tilde.
    """
    xv = _as_value(x)
    hv = h_prev.value
    z = 1.0 / (1.0 + np.exp(-(xv @ p["wz"].value + hv @ p["uz"].value + p["bz"].value)))
    r = 1.0 / (1.0 + np.exp(-(xv @ p["wr"].value + hv @ p["ur"].value + p["br"].value)))
    rh = r * hv
    c = np.tanh(xv @ p["wh"].value + rh @ p["uh"].value + p["bh"].value)
    out_val = hv + z * (c - hv)

    parents = (h_prev,) + tuple(p.values())
    if isinstance(x, Var):
        parents = (x,) + parents

    def bwd(g):
        dz = g * (c - hv)
        dc = g * z
        dh = g * (1.0 - z)

        da_c = dc * (1.0 - c * c)
        d_rh = da_c @ p["uh"].value.T
        dh += d_rh * r
        dr = d_rh * hv
        da_r = dr * r * (1.0 - r)
        da_z = dz * z * (1.0 - z)

        _accum(p["wh"], xv.T @ da_c)
        _accum(p["uh"], rh.T @ da_c)
        _accum(p["bh"], da_c.sum(axis=0))
        _accum(p["wr"], xv.T @ da_r)
        _accum(p["ur"], hv.T @ da_r)
        _accum(p["br"], da_r.sum(axis=0))
        _accum(p["wz"], xv.T @ da_z)
        _accum(p["uz"], hv.T @ da_z)
        _accum(p["bz"], da_z.sum(axis=0))

        dh += da_r @ p["ur"].value.T + da_z @ p["uz"].value.T
        _accum(h_prev, dh)
        if isinstance(x, Var):
            dx = da_c @ p["wh"].value.T + da_r @ p["wr"].value.T + da_z @ p["wz"].value.T
            _accum(x, dx)

    return Var(out_val, parents, bwd)


def softmax_xent_mean(logits: Var, targets) -> Var:
    """Mean cross-entropy of batched logits against integer class targets.

    Fused softmax + cross-entropy with max-subtraction stabilization;
    the gradient is (softmax - onehot) / batch.
    """
    targets = np.asarray(targets, dtype=np.int64)
    lv = logits.value
    shifted = lv - lv.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=-1, keepdims=True)
    n = targets.shape[0]
    rows = np.arange(n)
    losses = -(shifted[rows, targets] - np.log(exp.sum(axis=-1)))
    out_val = losses.mean()

    def bwd(g):
        dl = probs.copy()
        dl[rows, targets] -= 1.0
        _accum(logits, (g / n) * dl)

    return Var(out_val, (logits,), bwd)


def backward(loss: Var):
    """Backpropagate from a scalar loss, filling ``grad`` on every ancestor."""
    order: list[Var] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
