"""Mixed edges and searchable cells."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, add_n, concat, elementwise_mul, getitem, parameter, softmax
from ..search_space import CNN_OPS, CnnOpKind, cnn_op_apply, cnn_output_shape, init_cnn_op_params


@dataclass
class MixedEdge:
    """One cell edge holding every candidate op and its architecture logits."""

    theta: Tensor
    ops: tuple[CnnOpKind, ...] = CNN_OPS
    op_params: dict[CnnOpKind, dict[str, Tensor]] = field(default_factory=dict)
    stride: int = 1

    def alpha(self) -> np.ndarray:
        z = self.theta.data.astype(np.float64)
        e = np.exp(z - z.max())
        return e / e.sum()

    def parameters(self) -> list[Tensor]:
        return [p for kind in self.ops for p in self.op_params.get(kind, {}).values()]


def new_theta(num_ops: int) -> Tensor:
    return parameter(np.zeros(num_ops))


def make_edge(channels: int, stride: int, rng: np.random.Generator, theta: Tensor | None = None, ops=CNN_OPS, gain: float = 1.0) -> MixedEdge:
    ops = tuple(CnnOpKind(o) for o in ops)
    theta = theta if theta is not None else new_theta(len(ops))
    if theta.shape != (len(ops),):
        raise ValueError(f"theta shape {theta.shape} does not match {len(ops)} ops")
    params = {kind: init_cnn_op_params(kind, channels, stride, rng, gain) for kind in ops}
    return MixedEdge(theta, ops, params, stride)


def mixed_op_forward(edge: MixedEdge, x: Tensor, stride: int | None = None) -> Tensor:
    """Softmax(theta)-weighted sum of every candidate applied to ``x``.

    The ``none`` candidate contributes an exact zero and is skipped.
    """
    stride = edge.stride if stride is None else stride
    weights = softmax(edge.theta)
    terms = []
    for i, kind in enumerate(edge.ops):
        if kind is CnnOpKind.NONE:
            continue
        out = cnn_op_apply(kind, x, stride, edge.op_params.get(kind, {}))
        terms.append(elementwise_mul(getitem(weights, (i,)), out))
    if not terms:
        return Tensor(np.zeros(cnn_output_shape(x.shape, stride), x.data.dtype))
    return add_n(terms)


@dataclass
class CellConfig:
    """A searchable cell: node j receives one mixed edge from each of
    c_{k-2}, c_{k-1} and nodes 0..j-1."""

    num_nodes: int = 4
    cell_type: str = "normal"
    channels: int = 6
    edges: list[list[MixedEdge]] = field(default_factory=list)

    @property
    def reduction(self) -> bool:
        return self.cell_type == "reduction"

    def parameters(self) -> list[Tensor]:
        return [p for node in self.edges for e in node for p in e.parameters()]


def edge_count(num_nodes: int) -> int:
    return sum(j + 2 for j in range(num_nodes))


def edge_stride(cell_type: str, source: int) -> int:
    return 2 if cell_type == "reduction" and source < 2 else 1


def make_cell(
    num_nodes: int,
    cell_type: str,
    channels: int,
    rng: np.random.Generator,
    thetas: list[Tensor] | None = None,
    ops=CNN_OPS,
    gain: float = 1.0,
) -> CellConfig:
    """Build a cell; pass ``thetas`` (one per edge, in node-major order) to
    share architecture logits between cells of the same type."""
    if cell_type not in ("normal", "reduction"):
        raise ValueError(f"unknown cell type {cell_type!r}")
    if num_nodes < 1:
        raise ValueError("a cell needs at least one node")
    if thetas is not None and len(thetas) != edge_count(num_nodes):
        raise ValueError(f"expected {edge_count(num_nodes)} theta vectors, got {len(thetas)}")
    edges, k = [], 0
    for j in range(num_nodes):
        node = []
        for src in range(j + 2):
            theta = thetas[k] if thetas is not None else None
            node.append(make_edge(channels, edge_stride(cell_type, src), rng, theta, ops, gain))
            k += 1
        edges.append(node)
    return CellConfig(num_nodes, cell_type, channels, edges)


def cell_forward(cell: CellConfig, c_km2: Tensor, c_km1: Tensor) -> Tensor:
    """Evaluate all nodes; output is the channel concatenation of every node."""
    if c_km2.shape != c_km1.shape:
        raise ValueError(f"cell inputs differ in shape: {c_km2.shape} vs {c_km1.shape}")
    if c_km1.shape[1] != cell.channels:
        raise ValueError(f"cell expects {cell.channels} input channels, got {c_km1.shape[1]}")
    states = [c_km2, c_km1]
    for node in cell.edges:
        states.append(add_n([mixed_op_forward(e, states[src]) for src, e in enumerate(node)]))
    return concat(states[2:], axis=1)
