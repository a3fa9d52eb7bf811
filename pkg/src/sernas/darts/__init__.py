"""Differentiable cell search for spectrogram CNNs."""

from .bilevel import BilevelState, NonFiniteLossError, QuadraticSurrogate, SupernetObjective, bilevel_step
from .cells import CellConfig, MixedEdge, cell_forward, edge_count, make_cell, make_edge, mixed_op_forward
from .genotype import DegenerateEdgeError, Genotype, derive_cell, derive_genotype
from .network import (
    DerivedNetwork,
    NetworkConfig,
    SearchNetwork,
    build_derived_network,
    default_reductions,
    network_forward,
)
from .search import SearchResult, SearchSchedule, Split, search, write_history
