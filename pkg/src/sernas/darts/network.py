"""Stacked-cell networks: the relaxed search network and derived networks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import (
    Tensor,
    add_n,
    affine,
    avg_pool2d,
    concat,
    conv2d,
    elementwise_add,
    leaky_relu,
    mean,
    uniform_init,
)
from ..search_space import CNN_OPS, CnnOpKind, cnn_op_apply, factorized_reduce, factorized_reduce_params, init_cnn_op_params
from .cells import CellConfig, cell_forward, edge_count, edge_stride, make_cell, new_theta


HE_GAIN = float(np.sqrt(6.0))


def default_reductions(num_cells: int) -> tuple[int, ...]:
    """Reduction cells at one and two thirds of the depth."""
    if num_cells < 3:
        return ()
    return tuple(sorted({num_cells // 3, 2 * num_cells // 3}))


@dataclass
class NetworkConfig:
    num_cells: int = 3
    channels: int = 6
    num_nodes: int = 4
    reduction_positions: tuple[int, ...] | None = None
    input_shape: tuple[int, int, int] = (1, 140, 140)
    num_classes: int = 4
    ops: tuple[CnnOpKind, ...] = CNN_OPS
    # non-overlapping average pooling ahead of the 1x1 stem; 1 = off
    stem_pool: int = 1
    # He-uniform scale: keeps activations alive through stacked ops without normalization
    init_gain: float = HE_GAIN
    seed: int = 0

    def __post_init__(self):
        self.ops = tuple(CnnOpKind(o) for o in self.ops)
        self.input_shape = tuple(self.input_shape)
        if self.reduction_positions is None:
            self.reduction_positions = default_reductions(self.num_cells)
        self.reduction_positions = tuple(sorted(set(self.reduction_positions)))
        if self.num_cells < 1:
            raise ValueError("num_cells must be positive")
        if any(not 0 <= r < self.num_cells for r in self.reduction_positions):
            raise ValueError(f"reduction positions {self.reduction_positions} outside [0, {self.num_cells})")
        if self.channels < 1 or self.num_nodes < 1 or self.stem_pool < 1:
            raise ValueError("channels, num_nodes and stem_pool must be positive")
        _, h, w = self.input_shape
        if h % self.stem_pool or w % self.stem_pool:
            raise ValueError(f"stem_pool {self.stem_pool} does not divide input {h}x{w}")

    def to_dict(self) -> dict:
        return {
            "num_cells": self.num_cells,
            "channels": self.channels,
            "num_nodes": self.num_nodes,
            "reduction_positions": list(self.reduction_positions),
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "ops": [o.value for o in self.ops],
            "stem_pool": self.stem_pool,
            "init_gain": self.init_gain,
            "seed": self.seed,
        }


@dataclass
class CellSlot:
    """Channel bookkeeping for one position in the stack."""

    channels: int
    reduction: bool
    reduction_prev: bool
    in_prev_prev: int
    in_prev: int
    pre0: dict[str, Tensor] = field(default_factory=dict)
    pre1: dict[str, Tensor] = field(default_factory=dict)

    @property
    def cell_type(self) -> str:
        return "reduction" if self.reduction else "normal"


class _Stack:
    """Stem, per-cell preprocessing and classifier head shared by the
    search network and derived networks."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        self.config = config
        g = config.init_gain
        c = config.channels
        in_ch = config.input_shape[0]
        self.stem_w = uniform_init(rng, (c, in_ch, 1, 1), in_ch, g)
        self.stem_b = uniform_init(rng, (1, c, 1, 1), in_ch, g)
        self.slots: list[CellSlot] = []
        pp, p, cur, red_prev = c, c, c, False
        for k in range(config.num_cells):
            red = k in config.reduction_positions
            if red:
                cur *= 2
            slot = CellSlot(cur, red, red_prev, pp, p)
            if red_prev:
                slot.pre0 = factorized_reduce_params(pp, cur, rng, g)
            else:
                slot.pre0 = {"w": uniform_init(rng, (cur, pp, 1, 1), pp, g)}
            slot.pre1 = {"w": uniform_init(rng, (cur, p, 1, 1), p, g)}
            self.slots.append(slot)
            pp, p, red_prev = p, config.num_nodes * cur, red
        self.head_w = uniform_init(rng, (p, config.num_classes), p, g)
        self.head_b = uniform_init(rng, (config.num_classes,), p, g)

    def stack_parameters(self) -> list[Tensor]:
        out = [self.stem_w, self.stem_b]
        for s in self.slots:
            out += list(s.pre0.values()) + list(s.pre1.values())
        return out + [self.head_w, self.head_b]

    def _check_input(self, x: Tensor) -> None:
        if len(x.shape) != 4 or tuple(x.shape[1:]) != self.config.input_shape:
            raise ValueError(f"network expects [B,{','.join(map(str, self.config.input_shape))}] input, got {x.shape}")

    def _stem(self, x: Tensor) -> Tensor:
        sp = self.config.stem_pool
        if sp > 1:
            x = avg_pool2d(x, sp, sp, 0)
        return elementwise_add(conv2d(x, self.stem_w), self.stem_b)

    @staticmethod
    def _preprocess(slot: CellSlot, s0: Tensor, s1: Tensor) -> tuple[Tensor, Tensor]:
        if slot.reduction_prev:
            s0 = factorized_reduce(s0, slot.pre0)
        else:
            s0 = conv2d(leaky_relu(s0), slot.pre0["w"])
        s1 = conv2d(leaky_relu(s1), slot.pre1["w"])
        return s0, s1

    def _head(self, x: Tensor) -> Tensor:
        return affine(mean(x, axis=(2, 3)), self.head_w, self.head_b)

    def logits(self, x: Tensor) -> Tensor:
        self._check_input(x)
        s0 = s1 = self._stem(x)
        for k, slot in enumerate(self.slots):
            a, b = self._preprocess(slot, s0, s1)
            s0, s1 = s1, self._cell(k, a, b)
        return self._head(s1)

    def _cell(self, k: int, s0: Tensor, s1: Tensor) -> Tensor:
        raise NotImplementedError

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


class SearchNetwork(_Stack):
    """The relaxed supernet. Architecture logits are shared by all cells of
    one type, one theta vector per edge."""

    def __init__(self, config: NetworkConfig):
        rng = np.random.default_rng(config.seed)
        super().__init__(config, rng)
        n_edges = edge_count(config.num_nodes)
        self.thetas = {t: [new_theta(len(config.ops)) for _ in range(n_edges)] for t in ("normal", "reduction")}
        self.cells: list[CellConfig] = [
            make_cell(config.num_nodes, s.cell_type, s.channels, rng, self.thetas[s.cell_type], config.ops, config.init_gain)
            for s in self.slots
        ]

    def _cell(self, k, s0, s1):
        return cell_forward(self.cells[k], s0, s1)

    def omega_parameters(self) -> list[Tensor]:
        return self.stack_parameters() + [p for c in self.cells for p in c.parameters()]

    def alpha_parameters(self) -> list[Tensor]:
        return self.thetas["normal"] + self.thetas["reduction"]

    parameters = omega_parameters

    def alphas(self, cell_type: str) -> np.ndarray:
        return np.stack([_softmax64(t.data) for t in self.thetas[cell_type]])


def _softmax64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def network_forward(net: _Stack, spectrogram: Tensor) -> Tensor:
    """Logits [B, num_classes] for a batch of [B, C_in, H, W] inputs."""
    return net.logits(spectrogram)


class DerivedNetwork(_Stack):
    """Discrete network holding only the ops a genotype retained."""

    def __init__(self, genotype, config: NetworkConfig, seed: int | None = None):
        rng = np.random.default_rng(config.seed if seed is None else seed)
        super().__init__(config, rng)
        self.genotype = genotype
        self.cell_ops: list[list[list[tuple[int, CnnOpKind, dict]]]] = []
        for slot in self.slots:
            nodes = []
            for node in genotype.cell(slot.cell_type):
                kept = []
                for src, op in node:
                    stride = edge_stride(slot.cell_type, src)
                    kept.append((src, op, init_cnn_op_params(op, slot.channels, stride, rng, config.init_gain)))
                nodes.append(kept)
            self.cell_ops.append(nodes)

    def _cell(self, k, s0, s1):
        slot = self.slots[k]
        states = [s0, s1]
        for node in self.cell_ops[k]:
            terms = [cnn_op_apply(op, states[src], edge_stride(slot.cell_type, src), params) for src, op, params in node]
            states.append(add_n(terms))
        return concat(states[2:], axis=1)

    def parameters(self) -> list[Tensor]:
        ops = [p for cell in self.cell_ops for node in cell for _, _, params in node for p in params.values()]
        return self.stack_parameters() + ops


def build_derived_network(genotype, net_config: NetworkConfig, seed: int | None = None) -> DerivedNetwork:
    """Freshly initialised discrete network for ``genotype``."""
    genotype.validate()
    if genotype.num_nodes != net_config.num_nodes:
        raise ValueError(f"genotype has {genotype.num_nodes} nodes, config expects {net_config.num_nodes}")
    meta = genotype.metadata or {}
    if "num_cells" in meta and meta["num_cells"] != net_config.num_cells:
        raise ValueError(f"genotype searched with {meta['num_cells']} cells, config has {net_config.num_cells}")
    if "reduction_positions" in meta and tuple(meta["reduction_positions"]) != net_config.reduction_positions:
        raise ValueError(
            f"genotype searched with reductions at {tuple(meta['reduction_positions'])}, config has {net_config.reduction_positions}"
        )
    return DerivedNetwork(genotype, net_config, seed)
