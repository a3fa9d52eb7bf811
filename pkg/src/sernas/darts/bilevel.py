"""First-order alternating optimisation of weights and architecture logits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..autodiff import (
    AdamState,
    NonFiniteError,
    SGDState,
    Tape,
    Tensor,
    adam_step,
    backward,
    clip_grad_norm,
    cross_entropy,
    elementwise_add,
    elementwise_mul,
    neg,
    parameter,
    reduce_sum,
    sgd_step,
)


class BilevelModel(Protocol):
    def omega_parameters(self) -> list[Tensor]: ...

    def alpha_parameters(self) -> list[Tensor]: ...

    def batch_loss(self, batch) -> Tensor: ...


class NonFiniteLossError(FloatingPointError):
    def __init__(self, which: str, batch_index, cause: Exception):
        super().__init__(f"non-finite {which} loss on batch {batch_index}: {cause}")
        self.which = which
        self.batch_index = batch_index


@dataclass
class BilevelState:
    model: BilevelModel
    sgd: SGDState = field(default_factory=SGDState)
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    step: int = 0
    # global L2 clip on the weight gradient; None disables
    grad_clip: float | None = None

    def __post_init__(self):
        omega = {id(p) for p in self.model.omega_parameters()}
        if any(id(p) in omega for p in self.model.alpha_parameters()):
            raise ValueError("weight and architecture parameter sets overlap")


def _loss_and_grads(model, batch, params: list[Tensor], frozen: list[Tensor]):
    saved = [p.requires_grad for p in frozen]
    for p in frozen:
        p.requires_grad = False
    try:
        with Tape() as tape:
            loss = model.batch_loss(batch)
        grads = backward(tape, loss)
    finally:
        for p, flag in zip(frozen, saved):
            p.requires_grad = flag
    return float(loss.data), [grads.get(p, np.zeros_like(p.data)) for p in params]


def bilevel_step(state: BilevelState, train_batch, val_batch, batch_index=None, update_alpha: bool = True) -> tuple[float, float]:
    """One weight step on the training batch, then one architecture step on
    the validation batch at the updated weights.

    Returns (L_train, L_val), each measured before its own update. With
    ``update_alpha=False`` only the weights move and L_val is NaN.
    """
    model = state.model
    omega, alpha = model.omega_parameters(), model.alpha_parameters()
    try:
        l_train, g_omega = _loss_and_grads(model, train_batch, omega, alpha)
    except NonFiniteError as exc:
        raise NonFiniteLossError("training", batch_index, exc) from exc
    sgd_step(state.sgd, omega, clip_grad_norm(g_omega, state.grad_clip))
    if not update_alpha:
        state.step += 1
        return l_train, float("nan")
    try:
        l_val, g_alpha = _loss_and_grads(model, val_batch, alpha, omega)
    except NonFiniteError as exc:
        raise NonFiniteLossError("validation", batch_index, exc) from exc
    adam_step(state.adam, alpha, g_alpha)
    state.step += 1
    return l_train, l_val


class SupernetObjective:
    """Adapts a SearchNetwork to the bilevel protocol; batches are (x, labels)."""

    def __init__(self, net):
        self.net = net

    def omega_parameters(self):
        return self.net.omega_parameters()

    def alpha_parameters(self):
        return self.net.alpha_parameters()

    def batch_loss(self, batch):
        x, y = batch
        return cross_entropy(self.net.logits(Tensor(x)), y)


class QuadraticSurrogate:
    """Toy problem with known optimum: L_train = (w - a)^2 and
    L_val = (a - target)^2 + (w - target)^2. Batches are ignored."""

    def __init__(self, target: float, w0: float = 0.0, a0: float = 0.0):
        self.target = target
        self.w = parameter(np.array([w0]))
        self.a = parameter(np.array([a0]))
        self._t = Tensor(np.array([target]))

    def omega_parameters(self):
        return [self.w]

    def alpha_parameters(self):
        return [self.a]

    def batch_loss(self, batch):
        split = batch
        if split == "train":
            d = elementwise_add(self.w, neg(self.a))
            return reduce_sum(elementwise_mul(d, d))
        da = elementwise_add(self.a, neg(self._t))
        dw = elementwise_add(self.w, neg(self._t))
        return reduce_sum(elementwise_add(elementwise_mul(da, da), elementwise_mul(dw, dw)))
