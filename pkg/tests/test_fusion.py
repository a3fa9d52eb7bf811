import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sernas.fusion import BranchOutputs, FusionNet, fuse, train_fusion
from sernas.harness.metrics import unweighted_accuracy
from sernas.training import TrainConfig


def _probs(n, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(4), size=n)


def test_zero_net_is_uniform():
    out = fuse(_probs(5, 0), _probs(5, 1), FusionNet(zero=True))
    np.testing.assert_allclose(out, 0.25)


def test_identical_rows_fuse_identically():
    a = np.repeat(_probs(1, 0), 3, axis=0)
    b = np.repeat(_probs(1, 1), 3, axis=0)
    out = fuse(a, b, FusionNet(seed=4))
    assert (out == out[0]).all()


def test_architecture_shape():
    net = FusionNet()
    assert [w.shape for w in net.weights] == [(8, 8), (8, 4), (4, 4)]
    assert net.param_count() == 8 * 8 + 8 + 8 * 4 + 4 + 4 * 4 + 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_copy_spectrogram_net(seed):
    # first layer passes p_spec through with a large gain, the rest is identity
    net = FusionNet(zero=True)
    net.weights[0].data[:4, :4] = 50 * np.eye(4)
    net.weights[1].data[:4, :4] = np.eye(4)
    net.weights[2].data[:] = np.eye(4)
    a, b = _probs(20, seed), _probs(20, seed + 1)
    # leaky ReLU keeps positive inputs, so argmax follows p_spec exactly
    np.testing.assert_array_equal(fuse(a, b, net).argmax(1), a.argmax(1))


def test_rejects_non_probabilities():
    with pytest.raises(ValueError):
        fuse(np.ones((2, 4)), _probs(2, 0), FusionNet())
    with pytest.raises(ValueError):
        fuse(_probs(2, 0), _probs(3, 0), FusionNet())
    with pytest.raises(ValueError):
        fuse(np.full((2, 3), 1 / 3), _probs(2, 0), FusionNet())


def test_align_requires_matching_ids():
    p = {"a": _probs(1, 0)[0], "b": _probs(1, 1)[0]}
    with pytest.raises(ValueError):
        BranchOutputs.align(p, {"a": p["a"]}, {"a": 0, "b": 1})
    out = BranchOutputs.align(p, p, {"b": 1, "a": 0})
    assert out.ids == ["a", "b"]


def test_branch_outputs_round_trip(tmp_path):
    out = BranchOutputs([f"u{i}" for i in range(4)], _probs(4, 0), _probs(4, 1), [0, 1, 2, 3])
    out.save(tmp_path / "o.csv")
    back = BranchOutputs.load(tmp_path / "o.csv")
    assert back.ids == out.ids
    np.testing.assert_allclose(back.p_spec, out.p_spec, rtol=1e-6)
    np.testing.assert_array_equal(back.labels, out.labels)


def test_defaults():
    cfg = TrainConfig(epochs=100, lr=1e-3)
    assert (cfg.optimizer, cfg.lr, cfg.epochs) == ("adam", 1e-3, 100)


def _complementary(n, seed, noise=0.05):
    """Spectrogram branch separates classes 0/1 and is blind within 2/3;
    the sequence branch is the mirror image."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 4, n)
    spec = np.zeros((n, 4))
    seq = np.zeros((n, 4))
    for i, c in enumerate(y):
        if c < 2:
            spec[i, c] = 1.0
            seq[i, :2] = 0.5
        else:
            spec[i, 2:] = 0.5
            seq[i, c] = 1.0
    spec = spec + noise * rng.random((n, 4))
    seq = seq + noise * rng.random((n, 4))
    spec /= spec.sum(1, keepdims=True)
    seq /= seq.sum(1, keepdims=True)
    return BranchOutputs([f"u{i:04d}" for i in range(n)], spec, seq, y)


@pytest.mark.parametrize("seed", range(5))
def test_fusion_beats_each_complementary_branch(seed):
    train, test = _complementary(160, seed), _complementary(160, 100 + seed)
    result = train_fusion(train, test, cfg=TrainConfig(epochs=100, lr=1e-3, batch_size=4, seed=seed, select_on="last"))
    spec_ua = unweighted_accuracy(test.p_spec.argmax(1), test.labels, 4)
    seq_ua = unweighted_accuracy(test.p_seq.argmax(1), test.labels, 4)
    assert result.metrics.ua > max(spec_ua, seq_ua)


@pytest.mark.parametrize("seed", range(5))
def test_fusion_learns_to_ignore_a_noise_branch(seed):
    rng = np.random.default_rng(seed)

    def outputs(n, s):
        y = np.random.default_rng(s).integers(0, 4, n)
        spec = np.full((n, 4), 0.1)
        # a decent but imperfect branch: 85% of rows point at the right class
        right = np.random.default_rng(s + 1).random(n) < 0.85
        spec[np.arange(n), np.where(right, y, (y + 1) % 4)] = 0.7
        return BranchOutputs([f"u{i}" for i in range(n)], spec, rng.dirichlet(np.ones(4), n), y)

    train, test = outputs(320, seed), outputs(320, 50 + seed)
    result = train_fusion(train, test, cfg=TrainConfig(epochs=100, lr=1e-3, batch_size=4, seed=seed, select_on="last"))
    spec_ua = unweighted_accuracy(test.p_spec.argmax(1), test.labels, 4)
    assert result.metrics.ua >= spec_ua - 0.02
