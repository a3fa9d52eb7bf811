"""Recurrent branch for sequence features."""

from .branch import (
    AttentionPoolParams,
    CandidateResult,
    RnnBranchConfig,
    Selection,
    SequenceModel,
    attention_pool,
    attention_scores,
    attention_weights,
    classify,
    rnn_unroll,
    select_cell,
    stable_seed,
    train_candidate,
    write_selection,
)
from .cell import (
    CellBank,
    CellGraphError,
    RnnCellGraph,
    RnnNode,
    default_bank,
    feedforward,
    gru_like,
    init_cell_params,
    lstm_like,
    random_cell,
    rnn_cell_step,
)
