import csv
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sernas.darts import NetworkConfig, SearchNetwork, derive_genotype
from sernas.harness.config import (
    PROFILES,
    ConfigError,
    PipelineConfig,
    dump_config,
    flatten,
    load_config,
    parse_text,
)
from sernas.harness.data import UtteranceRecord, make_folds, read_manifest, write_manifest
from sernas.harness.dot import cell_dot, export_dot, genotype_dot, genotype_edges, parse_dot_edges
from sernas.harness.metrics import EMOTIONS, MetricsReport, ZeroSupportError, confusion_matrix, unweighted_accuracy
from sernas.harness.pipeline import UA_COLUMNS, ua_table, write_metrics, write_ua_table
from sernas.harness.synth import SynthConfig, class_patterns, iter_utterances, synth_dataset
from sernas.rnn import gru_like, lstm_like
from sernas.search_space import CnnOpKind

# -- folds ---------------------------------------------------------------------


def _records(sessions, speakers, per_class=2):
    out = []
    for s in range(sessions):
        for j in range(speakers):
            for c, label in enumerate(EMOTIONS):
                for k in range(per_class):
                    uid = f"S{s + 1}_spk{j + 1}_{label}_{k:03d}"
                    out.append(UtteranceRecord(uid, label, f"S{s + 1}", f"S{s + 1}_spk{j + 1}", f"wav/{uid}.wav"))
    return out


def test_five_sessions_two_speakers():
    folds = make_folds(_records(5, 2))
    assert len(folds) == 5
    assert all(len(f.train_speakers) == 8 for f in folds)


def test_two_sessions_two_speakers():
    folds = make_folds(_records(2, 2))
    assert len(folds) == 2
    assert all(len(f.train_speakers) == 2 for f in folds)


def test_speaker_roles_alternate():
    folds = make_folds(_records(4, 2))
    # first listed speaker validates in sessions 1 and 3, tests in 2 and 4
    assert [f.val_speaker.endswith("spk1") for f in folds] == [True, False, True, False]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(2, 3), st.randoms(use_true_random=False))
def test_fold_plan_invariants(sessions, speakers, rnd):
    records = _records(sessions, speakers, per_class=1)
    shuffled = records[:]
    rnd.shuffle(shuffled)
    a, b = make_folds(records), make_folds(shuffled)
    assert [(f.train, f.val, f.test) for f in a] == [(f.train, f.val, f.test) for f in b]
    for f in a:
        ids = [r.id for part in (f.train, f.val, f.test) for r in part]
        assert len(ids) == len(set(ids)) == len(records)
        assert {r.session_id for r in f.val + f.test} == {f.held_out_session}
        assert f.held_out_session not in {r.session_id for r in f.train}
    tested = Counter(r.id for f in a for r in f.test)
    vals = Counter(r.id for f in a for r in f.val)
    assert set(tested) | set(vals) == {r.id for r in records}
    assert max((tested + vals).values()) == 1


def test_single_speaker_session_rejected():
    records = [r for r in _records(2, 2) if not r.speaker_id.endswith("S2_spk2")]
    with pytest.raises(ValueError):
        make_folds(records)


def test_speaker_in_two_sessions_rejected():
    records = _records(2, 2)
    records.append(UtteranceRecord("x", "sad", "S2", "S1_spk1"))
    with pytest.raises(ValueError):
        make_folds(records)


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        UtteranceRecord("x", "neural", "S1", "a")


def test_manifest_round_trip(tmp_path):
    records = _records(2, 2, 1)
    write_manifest(records, tmp_path / "m.csv")
    assert read_manifest(tmp_path / "m.csv") == records


def test_manifest_id_defaults_to_stem(tmp_path):
    (tmp_path / "m.csv").write_text("path,label,session_id,speaker_id\nwav/a1.wav,happy,S1,p\n")
    (r,) = read_manifest(tmp_path / "m.csv")
    assert r.id == "a1" and r.seq_path == ""


def test_manifest_missing_columns(tmp_path):
    (tmp_path / "m.csv").write_text("path,label\nx.wav,sad\n")
    with pytest.raises(ValueError, match="lacks columns"):
        read_manifest(tmp_path / "m.csv")


# -- metrics -----------------------------------------------------------------


def test_all_correct():
    y = [0, 1, 2, 3, 3]
    assert unweighted_accuracy(y, y) == 1.0


def test_imbalanced_two_class_case():
    y = [0] * 10 + [1]
    p = [0] * 11
    assert unweighted_accuracy(p, y) == 0.5


def test_chance_level():
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(4), 5000)
    assert abs(unweighted_accuracy(rng.integers(0, 4, len(y)), y) - 0.25) < 0.01


def test_missing_class_with_fixed_class_count():
    with pytest.raises(ZeroSupportError):
        unweighted_accuracy([0, 1], [0, 1], num_classes=4)


def test_confusion_matrix_counts():
    cm = confusion_matrix([0, 1, 1, 3], [0, 0, 1, 3], 4)
    assert cm[0, 0] == 1 and cm[0, 1] == 1 and cm[1, 1] == 1 and cm[3, 3] == 1 and cm.sum() == 4


def test_report_row_names():
    row = MetricsReport.compute([0, 1, 2, 3], [0, 1, 2, 2]).row()
    assert row["recall_neutral"] == 1.0 and row["recall_happy"] == 0.5
    assert np.isnan(row["recall_sad"])


# -- synthetic corpus ----------------------------------------------------------


def test_default_sizes():
    cfg = SynthConfig()
    assert (cfg.num_sessions, cfg.speakers_per_session, cfg.utterances_per_class) == (2, 2, 40)


def test_synth_is_deterministic(tmp_path):
    cfg = SynthConfig(utterances_per_class=2, min_duration=0.5, max_duration=0.8)
    a = synth_dataset(cfg, tmp_path / "a")
    b = synth_dataset(cfg, tmp_path / "b")
    assert a == b
    for r in a[:5]:
        assert (tmp_path / "a" / r.path).read_bytes() == (tmp_path / "b" / r.path).read_bytes()
        assert (tmp_path / "a" / r.seq_path).read_bytes() == (tmp_path / "b" / r.seq_path).read_bytes()
    assert (tmp_path / "a" / "manifest.csv").read_bytes() == (tmp_path / "b" / "manifest.csv").read_bytes()


def test_synth_seed_changes_data():
    a = next(iter_utterances(SynthConfig(seed=0, utterances_per_class=1)))
    b = next(iter_utterances(SynthConfig(seed=1, utterances_per_class=1)))
    assert not np.array_equal(a.audio, b.audio)


def test_noise_free_nearest_centroid_is_perfect():
    # oracle features: mean of the cue band over frames
    cfg = SynthConfig(noise=0.0, cue_dropout=0.0, utterances_per_class=5)
    utts = list(iter_utterances(cfg))
    feats = np.stack([u.features[:, : cfg.seq_band].mean(0) for u in utts])
    y = np.array([u.record.label_index for u in utts])
    centroids = np.stack([feats[y == c].mean(0) for c in range(4)])
    pred = np.argmin(((feats[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    assert unweighted_accuracy(pred, y, 4) == 1.0


def test_cue_dropout_hits_one_modality():
    cfg = SynthConfig(cue_dropout=0.3, utterances_per_class=10)
    dropped = Counter(u.dropped for u in iter_utterances(cfg))
    assert set(dropped) == {"", "spectrogram", "sequence"}


def test_class_patterns_distinct():
    p = class_patterns(SynthConfig())
    assert len({tuple(r) for r in p}) == 4


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(num_sessions=1)
    with pytest.raises(ValueError):
        SynthConfig(cue_dropout=0.9)


# -- configuration -------------------------------------------------------------


def test_published_profile_defaults():
    cfg = PipelineConfig()
    net, sched, rnn = cfg.spectrogram.network, cfg.spectrogram.search, cfg.sequence.rnn
    assert (net.num_cells, net.channels) == (3, 6)
    assert (sched.epochs, sched.w_lr, sched.w_momentum, sched.w_weight_decay, sched.a_lr) == (50, 0.025, 0.9, 3e-4, 3e-4)
    assert (rnn.num_stacked_cells, rnn.hidden) == (2, 256)
    assert (cfg.sequence.select.lr, cfg.sequence.select.epochs) == (1e-3, 50)
    assert (cfg.fusion.train.lr, cfg.fusion.train.epochs) == (1e-3, 100)
    assert (cfg.features.window_ms, cfg.features.overlap_ms, cfg.features.output_rows) == (25.0, 14.0, 140)


def test_config_text_round_trip(tmp_path):
    cfg = load_config(profile="desk", overrides={"seed": "7", "spectrogram.network.ops": "max_pool_3x3,skip_connect"})
    (tmp_path / "c.txt").write_text(dump_config(cfg))
    back = load_config(tmp_path / "c.txt")
    assert flatten(back) == flatten(cfg)
    assert back.spectrogram.network.ops == (CnnOpKind.MAX_POOL_3X3, CnnOpKind.SKIP_CONNECT)


def test_overrides_take_precedence(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\nseed = 3\nsequence.rnn.hidden = 32  # inline\n")
    cfg = load_config(tmp_path / "c.txt", "desk", {"seed": "9"})
    assert cfg.seed == 9 and cfg.sequence.rnn.hidden == 32
    assert cfg.spectrogram.network.channels == int(PROFILES["desk"]["spectrogram.network.channels"])


def test_none_values_parse():
    cfg = load_config(overrides={"spectrogram.retrain.grad_clip": "none", "spectrogram.network.reduction_positions": "1"})
    assert cfg.spectrogram.retrain.grad_clip is None
    assert cfg.spectrogram.network.reduction_positions == (1,)


@pytest.mark.parametrize(
    "overrides",
    [{"nonsense.key": "1"}, {"seed": "abc"}, {"spectrogram.network.channels": "0"}, {"spectrogram.network.ops": "bogus_op"}],
)
def test_bad_config_rejected(overrides):
    with pytest.raises(ConfigError):
        load_config(overrides=overrides)


def test_parse_errors():
    with pytest.raises(ConfigError):
        parse_text("just words")
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.txt")
    with pytest.raises(ConfigError):
        load_config(profile="laptop")


# -- DOT export ----------------------------------------------------------------


def _genotype(seed=0):
    net = SearchNetwork(NetworkConfig(num_cells=1, channels=2, num_nodes=2, input_shape=(1, 4, 4), reduction_positions=()))
    rng = np.random.default_rng(seed)
    for cell_type in ("normal", "reduction"):
        for t in net.thetas[cell_type]:
            t.data = rng.normal(size=t.shape).astype(np.float32)
    return derive_genotype(net)


def test_two_node_genotype_has_four_op_edges():
    text = genotype_dot(_genotype(), "normal")
    assert len(parse_dot_edges(text)) == 4
    assert text.count("style=dashed") == 2


def test_dot_is_deterministic():
    assert export_dot(_genotype(3)) == export_dot(_genotype(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dot_round_trip(seed):
    g = _genotype(seed)
    for cell_type, text in export_dot(g).items():
        assert Counter(genotype_edges(text)) == Counter(g.edges(cell_type))


def test_cell_dot_edges():
    cell = gru_like()
    text = cell_dot(cell)
    edges = parse_dot_edges(text)
    assert len(edges) == sum(len(n.inputs) for n in cell.nodes)
    assert ("h1_prev", "h", "1") in edges
    assert list(export_dot(lstm_like())) == ["lstm_like"]


def test_export_rejects_other_objects():
    with pytest.raises(TypeError):
        export_dot(42)


# -- reports -------------------------------------------------------------------


def test_ua_table_five_folds(tmp_path):
    folds = make_folds(_records(5, 2, 1))
    rng = np.random.default_rng(0)
    for f in folds:
        out = tmp_path / "folds" / f"fold{f.index}"
        out.mkdir(parents=True)
        for name in ("spectrogram", "sequence", "fused"):
            y = rng.integers(0, 4, 40)
            y[:4] = range(4)
            write_metrics(out / f"{name}_metrics.csv", MetricsReport.compute(rng.integers(0, 4, 40), y), {"fold": f.index})
    rows = ua_table(tmp_path, folds)
    write_ua_table(rows, tmp_path / "reports" / "ua.csv")
    with open(tmp_path / "reports" / "ua.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 6 and table[-1]["fold"] == "mean"
    assert tuple(table[0]) == UA_COLUMNS
    for col in UA_COLUMNS[2:]:
        assert float(table[-1][col]) == pytest.approx(np.mean([r[col] for r in rows[:-1]]), abs=1e-6)
