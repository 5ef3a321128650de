"""Neural building blocks: GRU cells, affine layers, losses, ADAM.

Everything is float64 numpy. Parameters live in flat ``{name: ndarray}``
dicts so the optimizer, checkpointing, and gradient checks can treat all
architectures uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRU_KEYS = ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh")


@dataclass
class GruParams:
    """One GRU cell: input weights w*, recurrent weights u*, biases b*."""

    input_size: int
    hidden_size: int
    weights: dict = field(default_factory=dict)

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "GruParams":
        bound = 1.0 / np.sqrt(hidden_size)
        w = {}
        for k in GRU_KEYS:
            if k.startswith("w"):
                shape = (input_size, hidden_size)
            elif k.startswith("u"):
                shape = (hidden_size, hidden_size)
            else:
                shape = (hidden_size,)
            w[k] = rng.uniform(-bound, bound, size=shape)
        return cls(input_size, hidden_size, w)


@dataclass
class AffineParams:
    """A fully connected layer: x @ weight + bias."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def init(cls, input_size: int, output_size: int, rng: np.random.Generator) -> "AffineParams":
        bound = 1.0 / np.sqrt(input_size)
        return cls(
            rng.uniform(-bound, bound, size=(input_size, output_size)),
            rng.uniform(-bound, bound, size=(output_size,)),
        )


def gru_cell_forward(x, h_prev, p: GruParams):
    """One GRU step: h = (1 - z) * h_prev + z * h_tilde.

    Accepts a single vector or a batch (leading axis). Shapes must match
    the cell's input/hidden sizes.
    """
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ValueError(
            f"shape mismatch: x[...,{x.shape[-1]}], h[...,{h_prev.shape[-1]}] "
            f"vs cell ({p.input_size}, {p.hidden_size})"
        )
    w = p.weights
    z = _sigmoid(x @ w["wz"] + h_prev @ w["uz"] + w["bz"])
    r = _sigmoid(x @ w["wr"] + h_prev @ w["ur"] + w["br"])
    h_tilde = np.tanh(x @ w["wh"] + (r * h_prev) @ w["uh"] + w["bh"])
    return (1.0 - z) * h_prev + z * h_tilde


def affine_forward(x, p: AffineParams):
    """Affine map x @ W + b for a vector or batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.weight.shape[0]:
        raise ValueError(f"shape mismatch: x[...,{x.shape[-1]}] vs weight {p.weight.shape}")
    return x @ p.weight + p.bias


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, target_class: int):
    """Cross-entropy of one logit vector against an integer class.

    Returns (loss, dloss/dlogits). Stabilized by max-subtraction.
    """
    logits = np.asarray(logits, dtype=float)
    if not 0 <= target_class < logits.shape[-1]:
        raise IndexError(f"target class {target_class} out of range for {logits.shape[-1]} logits")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    loss = log_z - shifted[target_class]
    grad = softmax(logits)
    grad[target_class] -= 1.0
    return float(loss), grad


@dataclass
class AdamState:
    """ADAM moment accumulators plus hyperparameters.

    Defaults mirror the usual framework values; weight decay is applied as
    an L2 term added to the gradient before the moment update.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """One bias-corrected ADAM update, in place on ``params``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if state.weight_decay:
            g = g + state.weight_decay * p
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state
