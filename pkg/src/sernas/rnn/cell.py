"""Recurrent cells as small DAGs over the seven-op DSL, and the cell bank."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..search_space import RNN_ARITY, RNN_OPS, RnnOpKind, init_rnn_op_params, rnn_op_apply

SOURCES = ("x_t", "h1_prev", "h2_prev")
BANK_FORMAT = "sernas-cellbank"
BANK_VERSION = 1


class CellGraphError(ValueError):
    pass


@dataclass(frozen=True)
class RnnNode:
    id: str
    op: RnnOpKind
    inputs: tuple[str, ...]


@dataclass
class RnnCellGraph:
    """Nodes are kept in topological order; refs are node ids or SOURCES."""

    name: str
    nodes: list[RnnNode]
    h1_next: str
    h2_next: str

    def __post_init__(self):
        self.nodes = _toposort(self.nodes, self.name)
        known = set(SOURCES) | {n.id for n in self.nodes}
        for out in (self.h1_next, self.h2_next):
            if out not in known:
                raise CellGraphError(f"cell {self.name!r}: output {out!r} is not a node or source")

    def linear_nodes(self) -> list[str]:
        return [n.id for n in self.nodes if n.op is RnnOpKind.LINEAR]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nodes": [{"id": n.id, "op": n.op.value, "inputs": list(n.inputs)} for n in self.nodes],
            "outputs": {"h1_next": self.h1_next, "h2_next": self.h2_next},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RnnCellGraph":
        nodes = [RnnNode(n["id"], RnnOpKind(n["op"]), tuple(n["inputs"])) for n in d["nodes"]]
        return cls(d["name"], nodes, d["outputs"]["h1_next"], d["outputs"]["h2_next"])

    def zero_fixed_point(self) -> bool:
        """True when zero input and zero state map to zero state, given
        zero linear biases. Decided symbolically."""
        zero = {s: True for s in SOURCES}
        for n in self.nodes:
            z = [zero[i] for i in n.inputs]
            if n.op is RnnOpKind.SIGMOID_ACT:
                zero[n.id] = False
            elif n.op is RnnOpKind.BLEND:
                zero[n.id] = z[1] and z[2]
            elif n.op is RnnOpKind.ELEMENTWISE_PRODUCT:
                zero[n.id] = any(z)
            else:
                zero[n.id] = all(z)
        return zero[self.h1_next] and zero[self.h2_next]


def _toposort(nodes: list[RnnNode], name: str) -> list[RnnNode]:
    by_id = {}
    for n in nodes:
        if n.id in by_id or n.id in SOURCES:
            raise CellGraphError(f"cell {name!r}: duplicate node id {n.id!r}")
        if len(n.inputs) != RNN_ARITY[n.op]:
            raise CellGraphError(f"cell {name!r}: {n.op.value} node {n.id!r} takes {RNN_ARITY[n.op]} inputs, got {len(n.inputs)}")
        by_id[n.id] = n
    for n in nodes:
        for ref in n.inputs:
            if ref not in by_id and ref not in SOURCES:
                raise CellGraphError(f"cell {name!r}: node {n.id!r} references unknown {ref!r}")
    order, state = [], {}

    def visit(nid, path):
        if state.get(nid) == "done":
            return
        if state.get(nid) == "open":
            raise CellGraphError(f"cell {name!r}: cycle through {' -> '.join(path + [nid])}")
        state[nid] = "open"
        for ref in by_id[nid].inputs:
            if ref in by_id:
                visit(ref, path + [nid])
        state[nid] = "done"
        order.append(by_id[nid])

    for n in nodes:
        visit(n.id, [])
    return order


def init_cell_params(cell: RnnCellGraph, hidden: int, rng: np.random.Generator) -> dict[str, dict[str, Tensor]]:
    return {nid: init_rnn_op_params(RnnOpKind.LINEAR, hidden, rng) for nid in cell.linear_nodes()}


def rnn_cell_step(cell: RnnCellGraph, x_t: Tensor, h1: Tensor, h2: Tensor, params: dict | None = None) -> tuple[Tensor, Tensor]:
    """Evaluate the cell DAG once. ``x_t`` must already be projected to width h."""
    if not (x_t.shape == h1.shape == h2.shape) or len(x_t.shape) != 2:
        raise ValueError(f"cell {cell.name!r}: x_t, h1, h2 must share a [B,h] shape, got {x_t.shape}, {h1.shape}, {h2.shape}")
    values = {"x_t": x_t, "h1_prev": h1, "h2_prev": h2}
    params = params or {}
    for n in cell.nodes:
        values[n.id] = rnn_op_apply(n.op, [values[i] for i in n.inputs], params.get(n.id))
    return values[cell.h1_next], values[cell.h2_next]


# -- the shipped bank ---------------------------------------------------------


def _n(id, op, *inputs):
    return RnnNode(id, RnnOpKind(op), tuple(inputs))


def lstm_like() -> RnnCellGraph:
    """h1 is the exposed state, h2 the memory cell."""
    nodes = []
    for gate, act in (("i", "sigmoid_act"), ("f", "sigmoid_act"), ("o", "sigmoid_act"), ("g", "tanh_act")):
        nodes += [
            _n(f"{gate}x", "linear", "x_t"),
            _n(f"{gate}h", "linear", "h1_prev"),
            _n(f"{gate}s", "elementwise_sum", f"{gate}x", f"{gate}h"),
            _n(gate, act, f"{gate}s"),
        ]
    nodes += [
        _n("fc", "elementwise_product", "f", "h2_prev"),
        _n("ig", "elementwise_product", "i", "g"),
        _n("c", "elementwise_sum", "fc", "ig"),
        _n("tc", "tanh_act", "c"),
        _n("h", "elementwise_product", "o", "tc"),
    ]
    return RnnCellGraph("lstm_like", nodes, "h", "c")


def gru_like() -> RnnCellGraph:
    nodes = [
        _n("zx", "linear", "x_t"),
        _n("zh", "linear", "h1_prev"),
        _n("z", "elementwise_sum", "zx", "zh"),
        _n("rx", "linear", "x_t"),
        _n("rh", "linear", "h1_prev"),
        _n("rs", "elementwise_sum", "rx", "rh"),
        _n("r", "sigmoid_act", "rs"),
        _n("nx", "linear", "x_t"),
        _n("nh", "linear", "h1_prev"),
        _n("rn", "elementwise_product", "r", "nh"),
        _n("ns", "elementwise_sum", "nx", "rn"),
        _n("n", "tanh_act", "ns"),
        _n("h", "blend", "z", "h1_prev", "n"),
    ]
    return RnnCellGraph("gru_like", nodes, "h", "h")


def feedforward() -> RnnCellGraph:
    """Ignores the recurrent state entirely."""
    return RnnCellGraph("feedforward", [_n("a", "linear", "x_t"), _n("h", "tanh_act", "a")], "h", "h")


def random_cell(name: str, seed: int, num_nodes: int = 8) -> RnnCellGraph:
    """Random DAG over the DSL whose outputs keep the zero fixed point and
    whose h1 output depends on the previous state."""
    rng = np.random.default_rng(seed)
    ops = [o for o in RNN_OPS]
    for _ in range(10_000):
        nodes: list[RnnNode] = []
        refs = list(SOURCES)
        for k in range(num_nodes):
            op = ops[rng.integers(len(ops))]
            inputs = tuple(refs[rng.integers(len(refs))] for _ in range(RNN_ARITY[op]))
            nodes.append(RnnNode(f"n{k}", op, inputs))
            refs.append(f"n{k}")
        # squash the last node so the state stays bounded
        nodes.append(_n("out", "tanh_act", f"n{num_nodes - 1}"))
        mem = f"n{rng.integers(num_nodes)}"
        cell = RnnCellGraph(name, nodes, "out", mem)
        if cell.zero_fixed_point() and _depends_on(cell, cell.h1_next, "h1_prev") and _depends_on(cell, cell.h1_next, "x_t"):
            return _prune(cell)
    raise RuntimeError("could not sample a valid random cell")


def _depends_on(cell: RnnCellGraph, ref: str, source: str) -> bool:
    by_id = {n.id: n for n in cell.nodes}
    stack, seen = [ref], set()
    while stack:
        r = stack.pop()
        if r == source:
            return True
        if r in seen or r not in by_id:
            continue
        seen.add(r)
        stack.extend(by_id[r].inputs)
    return False


def _prune(cell: RnnCellGraph) -> RnnCellGraph:
    by_id = {n.id: n for n in cell.nodes}
    live, stack = set(), [cell.h1_next, cell.h2_next]
    while stack:
        r = stack.pop()
        if r in live or r not in by_id:
            continue
        live.add(r)
        stack.extend(by_id[r].inputs)
    return RnnCellGraph(cell.name, [n for n in cell.nodes if n.id in live], cell.h1_next, cell.h2_next)


@dataclass
class CellBank:
    cells: list[RnnCellGraph] = field(default_factory=list)

    def __post_init__(self):
        names = [c.name for c in self.cells]
        if len(set(names)) != len(names):
            raise CellGraphError("cell names in a bank must be unique")

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def __getitem__(self, name: str) -> RnnCellGraph:
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"format": BANK_FORMAT, "version": BANK_VERSION, "cells": [c.to_dict() for c in self.cells]}

    @classmethod
    def from_dict(cls, d: dict) -> "CellBank":
        if d.get("format") != BANK_FORMAT or d.get("version") != BANK_VERSION:
            raise CellGraphError(f"not a version-{BANK_VERSION} cell bank document")
        return cls([RnnCellGraph.from_dict(c) for c in d["cells"]])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "CellBank":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_bank() -> CellBank:
    return CellBank([lstm_like(), gru_like(), random_cell("random_a", 11), random_cell("random_b", 23)])
