import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sernas.autodiff import Tensor
from sernas.rnn import (
    AttentionPoolParams,
    CandidateResult,
    CellBank,
    CellGraphError,
    RnnBranchConfig,
    RnnCellGraph,
    RnnNode,
    SequenceModel,
    attention_pool,
    classify,
    default_bank,
    feedforward,
    gru_like,
    init_cell_params,
    lstm_like,
    random_cell,
    rnn_cell_step,
    rnn_unroll,
    select_cell,
    stable_seed,
    train_candidate,
)
from sernas.search_space import RnnOpKind
from sernas.training import Split, TrainConfig


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


def _rand(shape, seed=0):
    return _t(np.random.default_rng(seed).normal(size=shape))


def _identity():
    return RnnCellGraph("identity", [], "h1_prev", "h2_prev")


def test_identity_wiring_keeps_state():
    h1, h2 = _rand((2, 3), 1), _rand((2, 3), 2)
    n1, n2 = rnn_cell_step(_identity(), _rand((2, 3)), h1, h2)
    assert n1 is h1 and n2 is h2


def _zero_params(cell, h):
    params = init_cell_params(cell, h, np.random.default_rng(0))
    for node in params.values():
        for p in node.values():
            p.data = np.zeros_like(p.data)
    return params


def test_gru_zero_weights_closed_form():
    # z = 0 -> sigmoid 0.5 blend; n = tanh(0) = 0; so h' = h / 2
    cell = gru_like()
    h1 = _rand((3, 4), 5)
    n1, n2 = rnn_cell_step(cell, _rand((3, 4), 6), h1, h1, _zero_params(cell, 4))
    np.testing.assert_allclose(n1.data, 0.5 * h1.data, atol=1e-7)
    assert n2 is n1


def test_lstm_zero_weights_closed_form():
    # every gate is sigmoid(0) = 0.5 and g = 0: c' = c / 2, h' = 0.5 tanh(c / 2)
    cell = lstm_like()
    c = _rand((2, 4), 7)
    h, c2 = rnn_cell_step(cell, _rand((2, 4)), _rand((2, 4), 1), c, _zero_params(cell, 4))
    np.testing.assert_allclose(c2.data, 0.5 * c.data, atol=1e-6)
    np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * c.data), atol=1e-6)


@pytest.mark.parametrize("cell", list(default_bank()), ids=lambda c: c.name)
def test_bank_cells_have_zero_fixed_point(cell):
    assert cell.zero_fixed_point()
    params = init_cell_params(cell, 5, np.random.default_rng(0))
    for node in params.values():
        node["bias"].data = np.zeros_like(node["bias"].data)
    z = _t(np.zeros((2, 5)))
    n1, n2 = rnn_cell_step(cell, z, z, z, params)
    np.testing.assert_allclose(n1.data, 0.0, atol=1e-7)
    np.testing.assert_allclose(n2.data, 0.0, atol=1e-7)


def test_cycle_rejected():
    nodes = [RnnNode("a", RnnOpKind.TANH_ACT, ("b",)), RnnNode("b", RnnOpKind.TANH_ACT, ("a",))]
    with pytest.raises(CellGraphError, match="cycle"):
        RnnCellGraph("loop", nodes, "a", "b")


def test_arity_and_reference_checks():
    with pytest.raises(CellGraphError):
        RnnCellGraph("bad", [RnnNode("a", RnnOpKind.BLEND, ("x_t",))], "a", "a")
    with pytest.raises(CellGraphError):
        RnnCellGraph("bad", [RnnNode("a", RnnOpKind.TANH_ACT, ("nowhere",))], "a", "a")
    with pytest.raises(CellGraphError):
        RnnCellGraph("bad", [], "a", "h1_prev")


def test_nodes_sorted_topologically():
    nodes = [RnnNode("b", RnnOpKind.TANH_ACT, ("a",)), RnnNode("a", RnnOpKind.SIGMOID_ACT, ("x_t",))]
    assert [n.id for n in RnnCellGraph("c", nodes, "b", "b").nodes] == ["a", "b"]


def test_bank_round_trip(tmp_path):
    bank = default_bank()
    bank.save(tmp_path / "bank.json")
    back = CellBank.load(tmp_path / "bank.json")
    assert [c.to_dict() for c in back] == [c.to_dict() for c in bank]
    assert back["gru_like"].to_dict() == gru_like().to_dict()


def test_bank_rejects_duplicates_and_foreign_documents():
    with pytest.raises(CellGraphError):
        CellBank([gru_like(), gru_like()])
    with pytest.raises(CellGraphError):
        CellBank.from_dict({"format": "other", "version": 1, "cells": []})


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_random_cells_are_valid(seed):
    cell = random_cell("r", seed)
    assert cell.zero_fixed_point()
    json.dumps(cell.to_dict())


# -- unrolling and pooling ---------------------------------------------------


def _model(cell=None, **kw):
    cfg = RnnBranchConfig(**{"hidden": 4, "input_dim": 3, **kw})
    return SequenceModel(cell or gru_like(), cfg, seed=0)


def test_single_step_matches_cell_step():
    m = _model(num_stacked_cells=1)
    x = _rand((2, 1, 3), 3)
    out = rnn_unroll(m.config, m.layers, x).data[:, 0]
    graph, params, (pw, pb) = m.layers[0]
    proj = x.data[:, 0] @ pw.data + pb.data
    z = _t(np.zeros((2, 4)))
    h1, _ = rnn_cell_step(graph, _t(proj), z, z, params)
    np.testing.assert_allclose(out, h1.data, atol=1e-5)


def test_padding_only_changes_padded_positions():
    m = _model()
    x = _rand((1, 3, 3), 4).data
    padded = np.concatenate([x, np.zeros((1, 2, 3))], axis=1)
    mask = np.array([[True, True, True, False, False]])
    a = rnn_unroll(m.config, m.layers, _t(x)).data
    b = rnn_unroll(m.config, m.layers, _t(padded), mask).data
    np.testing.assert_allclose(b[:, :3], a, atol=1e-6)
    # masked steps carry the last real state forward
    np.testing.assert_allclose(b[:, 3], a[:, 2], atol=1e-6)
    pa = m.logits(_t(x)).data
    pb = m.logits(_t(padded), mask).data
    np.testing.assert_allclose(pa, pb, atol=1e-5)


def test_branch_defaults():
    cfg = RnnBranchConfig()
    assert (cfg.num_stacked_cells, cfg.hidden, cfg.input_dim, cfg.attention_dim) == (2, 256, 512, 128)
    assert RnnBranchConfig(hidden=16).attention_dim == 8


def _pool_params(h=3, width=2, seed=0):
    return AttentionPoolParams.init(h, width, np.random.default_rng(seed))


def test_pool_single_frame_is_that_frame():
    f = _rand((2, 1, 3))
    np.testing.assert_allclose(attention_pool(f, _pool_params()).data, f.data[:, 0], atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 1000))
def test_pool_identical_frames(t, seed):
    frame = np.random.default_rng(seed).normal(size=(1, 1, 3))
    f = _t(np.repeat(frame, t, axis=1))
    np.testing.assert_allclose(attention_pool(f, _pool_params(seed=seed)).data, frame[:, 0], atol=1e-7)


def test_pool_hand_set_scores():
    # score = 2 tanh(frame[0]), so frames are chosen to give scores [ln 3, 0]
    p = _pool_params()
    p.projection.data = np.eye(3, 2)
    p.context.data = np.array([[2.0], [0.0]])
    f1 = np.array([np.arctanh(np.log(3.0) / 2), 0.0, 1.0])
    frames = _t(np.stack([f1, np.zeros(3)])[None])
    pooled, w = attention_pool(frames, p, return_weights=True)
    np.testing.assert_allclose(w.data, [[0.75, 0.25]], atol=1e-6)
    np.testing.assert_allclose(pooled.data[0], 0.75 * f1, atol=1e-6)


def test_pool_ignores_masked_frames():
    f = _rand((1, 3, 3))
    pooled, w = attention_pool(f, _pool_params(), np.array([[True, False, True]]), return_weights=True)
    assert w.data[0, 1] < 1e-12
    with pytest.raises(ValueError):
        attention_pool(f, _pool_params(), np.array([[False, False, False]]))


def test_classifier_zero_weights_uniform():
    out = classify(_rand((3, 4)), _t(np.zeros((4, 4))), _t(np.zeros(4))).data
    np.testing.assert_allclose(out, 0.25)


def test_probabilities_shape_and_argmax():
    m = _model()
    x = _rand((5, 4, 3), 9)
    logits = m.logits(x).data
    prob = m.predict_proba(x).data
    assert prob.shape == (5, 4)
    np.testing.assert_array_equal(prob.argmax(1), logits.argmax(1))


def test_feature_width_checked():
    with pytest.raises(ValueError):
        _model().logits(_rand((1, 2, 5)))


# -- selection ---------------------------------------------------------------


def _splits(n=16, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 4
    x = rng.normal(size=(n, 3, 3)).astype(np.float32)
    x[:, :, 0] += y[:, None]
    return Split(x, y, ids=[f"a{i}" for i in range(n)]), Split(x[:8], y[:8], ids=[f"b{i}" for i in range(8)])


def _planted(losses):
    def evaluate(cell, train, val, config, train_cfg):
        return CandidateResult(cell.name, 0, losses[cell.name])

    return evaluate


def _bank(names):
    return CellBank([RnnCellGraph(n, [], "h1_prev", "h2_prev") for n in names])


def test_bank_of_one():
    tr, va = _splits()
    sel = select_cell(_bank(["only"]), tr, va, RnnBranchConfig(hidden=4, input_dim=3), evaluate_candidate=_planted({"only": 1.0}))
    assert sel.best == "only"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=6), st.randoms())
def test_planted_lowest_loss_wins_in_any_order(losses, rnd):
    names = [f"c{i}" for i in range(len(losses))]
    table = dict(zip(names, losses))
    table["planted"] = min(losses) / 2
    order = names + ["planted"]
    rnd.shuffle(order)
    tr, va = _splits()
    sel = select_cell(_bank(order), tr, va, RnnBranchConfig(hidden=4, input_dim=3), evaluate_candidate=_planted(table))
    assert sel.best == "planted"
    ranking = [r.name for r in sel.results]
    base = select_cell(_bank(sorted(order)), tr, va, RnnBranchConfig(hidden=4, input_dim=3), evaluate_candidate=_planted(table))
    assert ranking == [r.name for r in base.results]


def test_selection_rejects_overlapping_splits():
    tr, _ = _splits()
    with pytest.raises(ValueError):
        select_cell(_bank(["a"]), tr, tr, RnnBranchConfig(hidden=4, input_dim=3), evaluate_candidate=_planted({"a": 1.0}))


def test_all_diverged_is_an_error():
    tr, va = _splits()
    with pytest.raises(FloatingPointError):
        select_cell(_bank(["a", "b"]), tr, va, RnnBranchConfig(hidden=4, input_dim=3), evaluate_candidate=_planted({"a": np.inf, "b": np.inf}))


def test_train_candidate_is_deterministic():
    tr, va = _splits()
    cfg = RnnBranchConfig(hidden=4, input_dim=3, num_stacked_cells=1)
    tc = TrainConfig(epochs=2, batch_size=8, lr=1e-2)
    a = train_candidate(gru_like(), tr, va, cfg, tc)
    b = train_candidate(gru_like(), tr, va, cfg, tc)
    assert a == b and np.isfinite(a.val_loss)


def test_stable_seed_independent_of_order():
    assert stable_seed(0, "a", "b") == stable_seed(0, "a", "b")
    assert stable_seed(0, "a") != stable_seed(1, "a")


def _xor_task(n, t, seed):
    # label = bit at the first frame XOR bit at the last frame; middle frames are noise
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 2, n), rng.integers(0, 2, n)
    x = rng.normal(scale=0.3, size=(n, t, 2)).astype(np.float32)
    x[:, 0, 0] = 2 * a - 1
    x[:, -1, 1] = 2 * b - 1
    return Split(x, a ^ b)


@pytest.mark.slow
def test_gated_cell_beats_feedforward_on_long_range_cue():
    # without state, only the attention weights can couple the two cue frames
    wins = 0
    for seed in range(5):
        tr, va = _xor_task(96, 4, seed), _xor_task(64, 4, 100 + seed)
        cfg = RnnBranchConfig(hidden=12, input_dim=2, num_stacked_cells=1, num_classes=2, seed=seed)
        tc = TrainConfig(epochs=60, batch_size=16, lr=2e-2, seed=seed)
        gru = train_candidate(gru_like(), tr, va, cfg, tc)
        ff = train_candidate(feedforward(), tr, va, cfg, tc)
        wins += gru.val_loss < ff.val_loss
    assert wins == 5
