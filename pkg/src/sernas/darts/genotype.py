"""Discrete architectures and their derivation from trained logits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..search_space import CnnOpKind

GENOTYPE_FORMAT = "sernas-genotype"
GENOTYPE_VERSION = 1

Node = list[tuple[int, CnnOpKind]]


class DegenerateEdgeError(ValueError):
    pass


@dataclass
class Genotype:
    """Per cell type, per node: the retained (source, op) pairs.

    Sources 0 and 1 are c_{k-2} and c_{k-1}; source 2+j is node j.
    """

    normal: list[Node]
    reduction: list[Node]
    metadata: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return len(self.normal)

    def cell(self, cell_type: str) -> list[Node]:
        return self.normal if cell_type == "normal" else self.reduction

    def validate(self) -> None:
        if len(self.normal) != len(self.reduction):
            raise ValueError("normal and reduction cells differ in node count")
        for cell_type in ("normal", "reduction"):
            for j, node in enumerate(self.cell(cell_type)):
                if len(node) != 2:
                    raise ValueError(f"{cell_type} node {j} keeps {len(node)} edges, expected 2")
                for src, op in node:
                    if CnnOpKind(op) is CnnOpKind.NONE:
                        raise ValueError(f"{cell_type} node {j} retains 'none'")
                    if not 0 <= src < j + 2:
                        raise ValueError(f"{cell_type} node {j} has invalid source {src}")

    def edges(self, cell_type: str) -> list[tuple[int, int, str]]:
        """(source, node, op name) triples in node order."""
        return [(src, j, CnnOpKind(op).value) for j, node in enumerate(self.cell(cell_type)) for src, op in node]

    def to_dict(self) -> dict:
        def enc(cell):
            return [[{"source": int(s), "op": CnnOpKind(o).value} for s, o in node] for node in cell]

        return {
            "format": GENOTYPE_FORMAT,
            "version": GENOTYPE_VERSION,
            "num_nodes": self.num_nodes,
            "normal": enc(self.normal),
            "reduction": enc(self.reduction),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        if d.get("format") != GENOTYPE_FORMAT or d.get("version") != GENOTYPE_VERSION:
            raise ValueError(f"not a version-{GENOTYPE_VERSION} genotype document")

        def dec(cell):
            return [[(int(e["source"]), CnnOpKind(e["op"])) for e in node] for node in cell]

        g = cls(dec(d["normal"]), dec(d["reduction"]), dict(d.get("metadata", {})))
        if g.num_nodes != d.get("num_nodes", g.num_nodes):
            raise ValueError("num_nodes does not match the node lists")
        g.validate()
        return g

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Genotype":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _softmax64(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def derive_cell(thetas: list, ops: tuple[CnnOpKind, ...], num_nodes: int, keep: int = 2) -> list[Node]:
    """Strongest non-none op per edge, then the ``keep`` strongest edges per node.

    Ties resolve to the lowest op index, then the lowest source index.
    """
    ops = tuple(CnnOpKind(o) for o in ops)
    allowed = [i for i, o in enumerate(ops) if o is not CnnOpKind.NONE]
    if not allowed:
        raise DegenerateEdgeError("every candidate op is 'none'; no edge can be retained")
    cell, k = [], 0
    for j in range(num_nodes):
        ranked = []
        for src in range(j + 2):
            w = _softmax64(thetas[k])
            k += 1
            best = max(allowed, key=lambda i: (w[i], -i))
            ranked.append((-w[best], best, src))
        ranked.sort()
        if len(ranked) < keep:
            raise DegenerateEdgeError(f"node {j} has {len(ranked)} edges, cannot keep {keep}")
        cell.append(sorted((src, ops[op]) for _, op, src in ranked[:keep]))
    return cell


def derive_genotype(net, metadata: dict | None = None) -> Genotype:
    """Discretise a search network (anything with ``thetas`` and ``config``)."""
    cfg = net.config
    cells = {t: derive_cell([th.data for th in net.thetas[t]], cfg.ops, cfg.num_nodes) for t in ("normal", "reduction")}
    meta = {"num_cells": cfg.num_cells, "reduction_positions": list(cfg.reduction_positions)}
    meta.update(metadata or {})
    return Genotype(cells["normal"], cells["reduction"], meta)
