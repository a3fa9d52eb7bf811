"""Graphviz DOT export of derived cells, plus a small reader for the subset
we emit."""

from __future__ import annotations

import re

from ..darts import Genotype
from ..rnn import RnnCellGraph
from ..rnn.cell import SOURCES


def _q(name: str) -> str:
    return '"' + name.replace('"', r"\"") + '"'


def _cnn_node(src: int) -> str:
    return {0: "c_{k-2}", 1: "c_{k-1}"}.get(src, str(src - 2))


def genotype_dot(genotype: Genotype, cell_type: str) -> str:
    """One digraph for one cell type; op edges carry a label, the dashed
    edges into c_{k} are the output concatenation."""
    genotype.validate()
    lines = [f"digraph {cell_type} {{", "  rankdir=LR;"]
    for name in ("c_{k-2}", "c_{k-1}"):
        lines.append(f"  {_q(name)} [shape=box];")
    for j in range(genotype.num_nodes):
        lines.append(f"  {_q(str(j))} [shape=circle];")
    lines.append(f"  {_q('c_{k}')} [shape=box];")
    for src, j, op in genotype.edges(cell_type):
        lines.append(f"  {_q(_cnn_node(src))} -> {_q(str(j))} [label={_q(op)}];")
    for j in range(genotype.num_nodes):
        lines.append(f"  {_q(str(j))} -> {_q('c_{k}')} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def cell_dot(cell: RnnCellGraph) -> str:
    """Nodes are operations; edges carry the operand position."""
    lines = [f"digraph {_q(cell.name)} {{", "  rankdir=LR;"]
    for s in SOURCES:
        lines.append(f"  {_q(s)} [shape=box];")
    for n in cell.nodes:
        lines.append(f"  {_q(n.id)} [label={_q(f'{n.id}: {n.op.value}')}];")
    for out in ("h1_next", "h2_next"):
        lines.append(f"  {_q(out)} [shape=box];")
    for n in cell.nodes:
        for pos, ref in enumerate(n.inputs):
            lines.append(f"  {_q(ref)} -> {_q(n.id)} [label={_q(str(pos))}];")
    lines.append(f"  {_q(cell.h1_next)} -> {_q('h1_next')} [style=dashed];")
    lines.append(f"  {_q(cell.h2_next)} -> {_q('h2_next')} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_dot(obj) -> dict[str, str]:
    """Graph name -> DOT text. Genotypes yield separate normal and
    reduction graphs."""
    if isinstance(obj, Genotype):
        return {t: genotype_dot(obj, t) for t in ("normal", "reduction")}
    if isinstance(obj, RnnCellGraph):
        return {obj.name: cell_dot(obj)}
    raise TypeError(f"cannot export {type(obj).__name__} to DOT")


_EDGE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)"\s*->\s*"((?:[^"\\]|\\.)*)"\s*\[label="((?:[^"\\]|\\.)*)"\];\s*$')


def parse_dot_edges(text: str) -> list[tuple[str, str, str]]:
    """Labeled edges (source, target, label) of DOT text we emitted."""
    return [m.groups() for m in map(_EDGE.match, text.splitlines()) if m]


def genotype_edges(text: str) -> list[tuple[int, int, str]]:
    """Invert :func:`genotype_dot` back to (source, node, op) triples."""
    index = {"c_{k-2}": 0, "c_{k-1}": 1}
    return [(index[s] if s in index else int(s) + 2, int(t), op) for s, t, op in parse_dot_edges(text)]
