"""Sequence branch: stacked recurrent cells, attention pooling, classifier,
and selection of a cell from the bank by validation loss."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..autodiff import (
    NonFiniteError,
    Tensor,
    affine,
    concat,
    elementwise_add,
    elementwise_mul,
    getitem,
    matmul,
    reshape,
    softmax,
    tanh,
    uniform_init,
)
from ..training import Split, TrainConfig, evaluate, train_classifier
from .cell import CellBank, RnnCellGraph, init_cell_params, rnn_cell_step

log = logging.getLogger(__name__)

MASK_FILL = -1e9


@dataclass
class RnnBranchConfig:
    num_stacked_cells: int = 2
    hidden: int = 256
    input_dim: int = 512
    num_classes: int = 4
    # None means hidden // 2
    attention_width: int | None = None
    masking: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_stacked_cells < 1 or self.hidden < 1:
            raise ValueError("need at least one stacked cell and a positive hidden size")
        if self.attention_width is not None and self.attention_width < 1:
            raise ValueError("attention_width must be positive")

    @property
    def attention_dim(self) -> int:
        return self.attention_width or max(1, self.hidden // 2)


@dataclass
class AttentionPoolParams:
    projection: Tensor
    context: Tensor

    @classmethod
    def init(cls, hidden: int, width: int, rng) -> "AttentionPoolParams":
        return cls(uniform_init(rng, (hidden, width), hidden), uniform_init(rng, (width, 1), width))


def _frame(x: Tensor, t: int) -> Tensor:
    return getitem(x, (slice(None), t, slice(None)))


def rnn_unroll(config: RnnBranchConfig, cells: list, sequence: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Run ``cells`` (one ``(graph, params, projection)`` per layer) over
    [B,T,D] frames and return the top layer's h1 at every step [B,T,h].

    With a mask, padded steps carry the previous state forward unchanged.
    """
    if len(sequence.shape) != 3 or sequence.shape[1] < 1:
        raise ValueError(f"expected a non-empty [B,T,D] sequence, got {sequence.shape}")
    if len(cells) != config.num_stacked_cells:
        raise ValueError(f"expected {config.num_stacked_cells} stacked cells, got {len(cells)}")
    b, t_len, _ = sequence.shape
    h = config.hidden
    gates = None
    if mask is not None and config.masking:
        m = np.asarray(mask, dtype=sequence.data.dtype).reshape(b, t_len, 1)
        gates = [(Tensor(m[:, t]), Tensor(1 - m[:, t])) for t in range(t_len)]
    layer_in = sequence
    for graph, params, (pw, pb) in cells:
        projected = affine(layer_in, pw, pb)
        h1 = h2 = Tensor(np.zeros((b, h), sequence.data.dtype))
        outs = []
        for t in range(t_len):
            n1, n2 = rnn_cell_step(graph, _frame(projected, t), h1, h2, params)
            if gates is not None:
                keep, skip = gates[t]
                n1 = elementwise_add(elementwise_mul(n1, keep), elementwise_mul(h1, skip))
                n2 = elementwise_add(elementwise_mul(n2, keep), elementwise_mul(h2, skip))
            h1, h2 = n1, n2
            outs.append(reshape(h1, (b, 1, h)))
        layer_in = concat(outs, axis=1)
    return layer_in


def attention_scores(frames: Tensor, params: AttentionPoolParams) -> Tensor:
    b, t, _ = frames.shape
    return reshape(matmul(tanh(matmul(frames, params.projection)), params.context), (b, t))


def attention_weights(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise ValueError("an utterance has every frame masked")
        scores = elementwise_add(scores, Tensor(np.where(mask, 0.0, MASK_FILL).astype(scores.data.dtype)))
    return softmax(scores, axis=1)


def attention_pool(frames: Tensor, params: AttentionPoolParams, mask: np.ndarray | None = None, return_weights: bool = False):
    """Softmax-weighted sum of frames, scores = context . tanh(W frame)."""
    b, t, h = frames.shape
    w = attention_weights(attention_scores(frames, params), mask)
    pooled = reshape(matmul(reshape(w, (b, 1, t)), frames), (b, h))
    return (pooled, w) if return_weights else pooled


def classify(pooled: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return softmax(affine(pooled, weight, bias), axis=-1)


class SequenceModel:
    """Projection, stacked cells sharing one graph, attention pooling and
    an affine classifier."""

    def __init__(self, graph: RnnCellGraph, config: RnnBranchConfig, seed: int | None = None):
        rng = np.random.default_rng(config.seed if seed is None else seed)
        self.graph, self.config = graph, config
        self.layers = []
        width = config.input_dim
        for _ in range(config.num_stacked_cells):
            proj = (uniform_init(rng, (width, config.hidden), width), uniform_init(rng, (config.hidden,), width))
            self.layers.append((graph, init_cell_params(graph, config.hidden, rng), proj))
            width = config.hidden
        self.attention = AttentionPoolParams.init(config.hidden, config.attention_dim, rng)
        self.cls_w = uniform_init(rng, (config.hidden, config.num_classes), config.hidden)
        self.cls_b = uniform_init(rng, (config.num_classes,), config.hidden)

    def parameters(self) -> list[Tensor]:
        out = []
        for _, params, proj in self.layers:
            out += list(proj) + [p for node in params.values() for p in node.values()]
        return out + [self.attention.projection, self.attention.context, self.cls_w, self.cls_b]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def logits(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if x.shape[-1] != self.config.input_dim:
            raise ValueError(f"model expects {self.config.input_dim} feature columns, got {x.shape[-1]}")
        frames = rnn_unroll(self.config, self.layers, x, mask)
        pooled = attention_pool(frames, self.attention, mask if self.config.masking else None)
        return affine(pooled, self.cls_w, self.cls_b)

    def predict_proba(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        return softmax(self.logits(x, mask), axis=-1)


def stable_seed(root: int, *names: str) -> int:
    """Per-job seed that does not depend on job ordering."""
    digest = hashlib.sha256(":".join([str(root), *names]).encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


@dataclass
class CandidateResult:
    name: str
    param_count: int
    val_loss: float


@dataclass
class Selection:
    best: str
    results: list[CandidateResult]

    @property
    def losses(self) -> dict[str, float]:
        return {r.name: r.val_loss for r in self.results}


Evaluator = Callable[[RnnCellGraph, Split, Split, RnnBranchConfig, TrainConfig], CandidateResult]


def train_candidate(cell: RnnCellGraph, train: Split, val: Split, config: RnnBranchConfig, train_cfg: TrainConfig) -> CandidateResult:
    seed = stable_seed(train_cfg.seed, cell.name)
    model = SequenceModel(cell, config, seed=seed)
    cfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed, "select_on": "last"})
    try:
        train_classifier(model, train, None, cfg)
        loss, _ = evaluate(model, val)
    except NonFiniteError as exc:
        log.warning("candidate %s diverged: %s", cell.name, exc)
        loss = float("inf")
    return CandidateResult(cell.name, model.param_count(), loss)


def select_cell(
    bank: CellBank,
    train: Split,
    val: Split,
    config: RnnBranchConfig,
    train_cfg: TrainConfig | None = None,
    evaluate_candidate: Evaluator = train_candidate,
) -> Selection:
    """Train every candidate independently and keep the lowest final
    validation loss (ties go to the alphabetically first name)."""
    if len(train) == 0 or len(val) == 0:
        raise ValueError("select_cell needs non-empty training and validation splits")
    if train.ids is not None and val.ids is not None and set(train.ids) & set(val.ids):
        raise ValueError("training and validation splits overlap")
    train_cfg = train_cfg or TrainConfig(epochs=50, lr=1e-3)
    results = [evaluate_candidate(cell, train, val, config, train_cfg) for cell in sorted(bank, key=lambda c: c.name)]
    results.sort(key=lambda r: (r.val_loss, r.name))
    if not np.isfinite(results[0].val_loss):
        raise FloatingPointError("every candidate cell diverged")
    return Selection(results[0].name, results)


def write_selection(selection: Selection, path) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "params", "val_loss"])
        for r in selection.results:
            w.writerow([r.name, r.param_count, f"{r.val_loss:.8g}"])
