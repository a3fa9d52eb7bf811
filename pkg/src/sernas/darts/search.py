"""The architecture search loop and its audit trail."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import AdamState, SGDState
from ..training import Split
from .bilevel import BilevelState, NonFiniteLossError, SupernetObjective, bilevel_step
from .genotype import Genotype, derive_genotype
from .network import NetworkConfig, SearchNetwork

log = logging.getLogger(__name__)


@dataclass
class SearchSchedule:
    epochs: int = 50
    batch_size: int = 32
    w_lr: float = 0.025
    w_momentum: float = 0.9
    w_weight_decay: float = 3e-4
    w_grad_clip: float | None = 5.0
    a_lr: float = 3e-4
    a_beta1: float = 0.9
    a_beta2: float = 0.999
    seed: int = 0
    nonfinite_patience: int = 3
    # leading epochs that train weights only, so parametric ops are not
    # judged at their random initialisation
    warmup_epochs: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class SearchResult:
    genotype: Genotype
    history: list[dict] = field(default_factory=list)
    network: SearchNetwork | None = None


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def alpha_snapshot(net: SearchNetwork) -> dict[str, float]:
    out = {}
    for cell_type in ("normal", "reduction"):
        for e, row in enumerate(net.alphas(cell_type)):
            for op, w in zip(net.config.ops, row):
                out[f"alpha_{cell_type}_{e}_{op.value}"] = float(w)
    return out


def search(dataset, net_config: NetworkConfig, schedule: SearchSchedule | None = None) -> SearchResult:
    """Relaxed search over ``dataset.train`` / ``dataset.val``, then derivation."""
    schedule = schedule or SearchSchedule()
    train, val = dataset.train, dataset.val
    if len(train) == 0 or len(val) == 0:
        raise ValueError("search needs non-empty training and validation splits")
    net = SearchNetwork(net_config)
    state = BilevelState(
        SupernetObjective(net),
        SGDState(schedule.w_lr, schedule.w_momentum, schedule.w_weight_decay),
        AdamState(schedule.a_lr, schedule.a_beta1, schedule.a_beta2),
        grad_clip=schedule.w_grad_clip,
    )
    rng = np.random.default_rng(schedule.seed)
    history = []
    streak = 0
    final_val = float("nan")
    for epoch in range(schedule.epochs):
        tb = _batches(len(train), schedule.batch_size, rng)
        vb = _batches(len(val), schedule.batch_size, rng)
        lt, lv = [], []
        for i, idx in enumerate(tb):
            vidx = vb[i % len(vb)]
            try:
                l_train, l_val = bilevel_step(
                    state, (train.x[idx], train.y[idx]), (val.x[vidx], val.y[vidx]), (epoch, i), update_alpha=epoch >= schedule.warmup_epochs
                )
            except NonFiniteLossError as exc:
                streak += 1
                log.warning("%s (streak %d)", exc, streak)
                if streak > schedule.nonfinite_patience:
                    raise
                continue
            streak = 0
            lt.append(l_train)
            lv.append(l_val)
        state.epoch = epoch + 1
        final_val = float(np.mean(lv)) if lv else float("nan")
        row = {"epoch": epoch + 1, "L_train": float(np.mean(lt)) if lt else float("nan"), "L_val": final_val}
        row.update(alpha_snapshot(net))
        history.append(row)
        log.info("epoch %d  L_train %.4f  L_val %.4f", epoch + 1, row["L_train"], row["L_val"])
    if schedule.epochs == 0:
        log.warning("zero-epoch schedule: genotype reflects the initial architecture logits")
    meta = {"search_seed": schedule.seed, "epochs": schedule.epochs, "final_val_loss": final_val}
    return SearchResult(derive_genotype(net, meta), history, net)


def write_history(history: list[dict], path) -> None:
    path = Path(path)
    if not history:
        path.write_text("epoch,L_train,L_val\n")
        return
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(history[0]))
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})
