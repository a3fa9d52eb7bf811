"""Minibatch training with best-on-validation checkpointing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, SGDState, Tape, Tensor, adam_step, backward, clip_grad_norm, cross_entropy, sgd_step, softmax
from .harness.metrics import unweighted_accuracy

log = logging.getLogger(__name__)


@dataclass
class Split:
    """Features, integer labels, an optional frame mask and utterance ids."""

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray | None = None
    ids: list[str] | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError("features and labels differ in length")

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Split":
        return Split(
            self.x[idx],
            self.y[idx],
            None if self.mask is None else self.mask[idx],
            None if self.ids is None else [self.ids[i] for i in idx],
        )


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    # global L2 gradient clip; None disables
    grad_clip: float | None = None
    seed: int = 0
    # "ua", "loss" or "last"
    select_on: str = "ua"


@dataclass
class TrainResult:
    best_epoch: int
    best_val_loss: float
    best_val_ua: float
    history: list[dict] = field(default_factory=list)


def model_logits(model, x: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    if mask is None:
        return model.logits(Tensor(x))
    return model.logits(Tensor(x), mask)


def predict_proba(model, split: Split, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(split), batch_size):
        sl = slice(i, i + batch_size)
        logits = model_logits(model, split.x[sl], None if split.mask is None else split.mask[sl])
        out.append(softmax(logits, axis=-1).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, 0))


def evaluate(model, split: Split, batch_size: int = 64) -> tuple[float, float]:
    """(mean cross-entropy, unweighted accuracy)."""
    prob = predict_proba(model, split, batch_size)
    nll = -np.log(np.clip(prob[np.arange(len(split)), split.y], 1e-12, None))
    return float(nll.mean()), unweighted_accuracy(prob.argmax(axis=1), split.y)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return AdamState(lr=cfg.lr)
    if cfg.optimizer == "sgd":
        return SGDState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def train_step(model, params, opt, x, y, mask=None, grad_clip: float | None = None) -> float:
    with Tape() as tape:
        loss = cross_entropy(model_logits(model, x, mask), y)
    grads = backward(tape, loss)
    g = clip_grad_norm([grads.get(p, np.zeros_like(p.data)) for p in params], grad_clip)
    (adam_step if isinstance(opt, AdamState) else sgd_step)(opt, params, g)
    return float(loss.data)


def train_classifier(model, train: Split, val: Split | None, cfg: TrainConfig) -> TrainResult:
    """Train ``model`` (anything with ``parameters()`` and ``logits()``) and
    restore the checkpoint with the best validation score."""
    params = model.parameters()
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    history = []
    best = (-np.inf, None, 0, np.nan, np.nan)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for i in range(0, len(train), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            losses.append(train_step(model, params, opt, train.x[idx], train.y[idx], None if train.mask is None else train.mask[idx], cfg.grad_clip))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val is not None and len(val):
            row["val_loss"], row["val_ua"] = evaluate(model, val)
            score = {"ua": (row["val_ua"], -row["val_loss"]), "loss": (-row["val_loss"],), "last": (epoch,)}[cfg.select_on]
            if best[1] is None or score > best[0]:
                best = (score, [p.data.copy() for p in params], epoch, row["val_loss"], row["val_ua"])
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
    if best[1] is not None:
        for p, data in zip(params, best[1]):
            p.data = data
        return TrainResult(best[2], best[3], best[4], history)
    return TrainResult(cfg.epochs, np.nan, np.nan, history)
