"""SGD with momentum/weight decay and bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor

MAX_STEPS = 2**63 - 1


@dataclass
class SGDState:
    lr: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 3e-4
    buffers: dict = field(default_factory=dict, repr=False)

    kind = "sgd"


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first: dict = field(default_factory=dict, repr=False)
    second: dict = field(default_factory=dict, repr=False)

    kind = "adam"


def _grad_for(p: Tensor, grads, i: int) -> np.ndarray:
    g = grads[p] if isinstance(grads, dict) else grads[i]
    g = np.asarray(g)
    if g.shape != p.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
    return g


def clip_grad_norm(grads: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    """Rescale so the global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if norm <= max_norm:
        return grads
    scale = max_norm / (norm + 1e-6)
    return [(g * scale).astype(g.dtype, copy=False) for g in grads]


def sgd_step(state: SGDState, params: list[Tensor], grads) -> list[Tensor]:
    """v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v."""
    if not isinstance(state, SGDState):
        raise TypeError("sgd_step needs an SGDState")
    for i, p in enumerate(params):
        g = _grad_for(p, grads, i)
        v = state.buffers.get(id(p))
        step = g + state.weight_decay * p.data if state.weight_decay else g
        v = step if v is None else state.momentum * v + step
        state.buffers[id(p)] = v
        p.data = (p.data - state.lr * v).astype(p.data.dtype)
    return params


def adam_step(state: AdamState, params: list[Tensor], grads) -> list[Tensor]:
    if not isinstance(state, AdamState):
        raise TypeError("adam_step needs an AdamState")
    if state.step_count >= MAX_STEPS:
        raise OverflowError("adam step counter overflow")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, p in enumerate(params):
        g = _grad_for(p, grads, i).astype(np.float64)
        m = state.first.get(id(p), 0.0)
        v = state.second.get(id(p), 0.0)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.first[id(p)], state.second[id(p)] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data = (p.data - update).astype(p.data.dtype)
    return params
