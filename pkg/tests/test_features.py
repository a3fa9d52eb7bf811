import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from sernas.features import (
    FeatureFormatError,
    FeatureMatrix,
    SpectrogramConfig,
    Waveform,
    extract_spectrogram,
    frame_count,
    ingest_feature_matrix,
    load_wav,
    pad_features_to_max,
    pad_or_truncate,
    pool_rows,
    pool_to_shape,
    read_feature_matrix,
    spectrogram,
    write_feature_matrix,
    write_wav,
)


def test_pcm_full_scale(tmp_path):
    wavfile.write(tmp_path / "a.wav", 16000, np.array([32767, -32768, 0], dtype=np.int16))
    w = load_wav(tmp_path / "a.wav")
    assert w.samples[0] == pytest.approx(1.0, abs=1e-4)
    assert w.samples[1] == -1.0


def test_stereo_downmix(tmp_path):
    data = np.array([[1000, 3000], [-2000, 0]], dtype=np.int16)
    wavfile.write(tmp_path / "s.wav", 8000, data)
    np.testing.assert_allclose(load_wav(tmp_path / "s.wav").samples, data.mean(1) / 32768.0)


def test_one_second_sample_count(tmp_path):
    write_wav(tmp_path / "b.wav", Waveform(np.zeros(16000), 16000))
    w = load_wav(tmp_path / "b.wav")
    assert len(w.samples) == 16000 and w.duration == 1.0


def test_garbage_wav_rejected(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(FeatureFormatError):
        load_wav(tmp_path / "bad.wav")


def test_truncate_keeps_prefix():
    x = np.arange(10 * 100, dtype=float)
    w = pad_or_truncate(Waveform(x, 100), 8.0)
    np.testing.assert_array_equal(w.samples, x[:800])


def test_short_input_zero_padded():
    x = np.ones(500)
    w = pad_or_truncate(Waveform(x, 100), 8.0)
    assert len(w.samples) == 800
    assert w.samples[:500].all() and not w.samples[500:].any()


def test_exact_length_unchanged():
    x = np.random.default_rng(0).normal(size=800)
    np.testing.assert_array_equal(pad_or_truncate(Waveform(x, 100), 8.0).samples, x)


def test_framing_count_closed_form():
    cfg = SpectrogramConfig()
    assert (cfg.window_length, cfg.hop) == (400, 176)
    assert cfg.num_frames == (128000 - 400) // 176 + 1 == 726


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 5000), st.integers(1, 400), st.integers(1, 200))
def test_frame_count_matches_enumeration(n, window, hop):
    if window > n:
        with pytest.raises(ValueError):
            frame_count(n, window, hop)
        return
    starts = range(0, n - window + 1, hop)
    assert frame_count(n, window, hop) == len(starts)


def test_default_spectrogram_is_140_by_140():
    w = Waveform(np.random.default_rng(0).normal(scale=0.1, size=128000), 16000)
    assert spectrogram(w).shape == (140, 140)


def test_silence_gives_zeros():
    m = spectrogram(Waveform(np.zeros(128000), 16000))
    assert not m.data.any()


def test_spectrogram_rejects_wrong_length_and_rate():
    with pytest.raises(ValueError):
        spectrogram(Waveform(np.zeros(1000), 16000))
    with pytest.raises(ValueError):
        spectrogram(Waveform(np.zeros(64000), 8000))


def test_pure_tone_lands_in_its_bin():
    rate = 16000
    t = np.arange(128000) / rate
    f = 1000.0
    m = spectrogram(Waveform(0.5 * np.sin(2 * np.pi * f * t), rate)).data
    # bin spacing is rate / window = 40 Hz
    assert int(np.argmax(m.mean(0))) == int(f / 40)


def test_extract_from_file_pads_short_audio(tmp_path):
    write_wav(tmp_path / "c.wav", Waveform(0.1 * np.ones(16000 * 3), 16000))
    m = extract_spectrogram(tmp_path / "c.wav")
    assert m.shape == (140, 140) and m.kind == "spectrogram"


def test_pool_identity():
    x = np.random.default_rng(1).normal(size=(7, 3))
    np.testing.assert_allclose(pool_rows(x, 7), x)


def test_pool_726_to_140_partition():
    x = np.arange(726, dtype=float)[:, None]
    out = pool_rows(x, 140)[:, 0]
    # first 26 groups of 6 rows, the remaining 114 of 5
    sizes = [6] * 26 + [5] * 114
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    want = [x[s : s + k, 0].mean() for s, k in zip(starts, sizes)]
    np.testing.assert_allclose(out, want)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50), st.floats(-100, 100))
def test_pool_constant(rows, extra, c):
    x = np.full((rows + extra, 2), c)
    np.testing.assert_allclose(pool_rows(x, rows), c, rtol=1e-12, atol=1e-12)


def test_pool_cannot_upsample():
    with pytest.raises(ValueError):
        pool_to_shape(FeatureMatrix(np.zeros((3, 2)), "sequence"), 5)


def test_matrix_round_trip_is_bit_exact(tmp_path):
    x = np.random.default_rng(2).normal(size=(727, 512)).astype(np.float32)
    write_feature_matrix(tmp_path / "m.emns", x)
    back = read_feature_matrix(tmp_path / "m.emns")
    assert back.shape == (727, 512)
    assert back.tobytes() == x.tobytes()
    assert ingest_feature_matrix(tmp_path / "m.emns").shape == (727, 512)


def test_corrupted_payload_rejected(tmp_path):
    write_feature_matrix(tmp_path / "m.emns", np.zeros((3, 4)))
    raw = (tmp_path / "m.emns").read_bytes()
    (tmp_path / "m.emns").write_bytes(raw[:-4])
    with pytest.raises(FeatureFormatError, match="payload"):
        read_feature_matrix(tmp_path / "m.emns")
    (tmp_path / "m.emns").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FeatureFormatError, match="magic"):
        read_feature_matrix(tmp_path / "m.emns")


def test_non_finite_matrix_rejected(tmp_path):
    write_feature_matrix(tmp_path / "n.emns", np.array([[np.nan, 1.0]]))
    with pytest.raises(FeatureFormatError):
        ingest_feature_matrix(tmp_path / "n.emns")


def test_pad_single_matrix():
    x = np.ones((4, 3))
    batch, mask = pad_features_to_max([x])
    np.testing.assert_array_equal(batch[0], x)
    assert mask.all()


def test_pad_lengths_three_and_five():
    batch, mask = pad_features_to_max([np.ones((3, 2)), np.ones((5, 2))])
    assert batch.shape == (2, 5, 2)
    np.testing.assert_array_equal(mask[0], [1, 1, 1, 0, 0])
    assert not batch[0, 3:].any()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=6), st.integers(0, 1000))
def test_masked_mean_equals_per_item_mean(lengths, seed):
    rng = np.random.default_rng(seed)
    mats = [rng.normal(size=(n, 3)) for n in lengths]
    batch, mask = pad_features_to_max(mats)
    masked = (batch * mask[..., None]).sum(1) / mask.sum(1, keepdims=True)
    want = np.stack([m.mean(0) for m in mats])
    np.testing.assert_allclose(masked, want, rtol=1e-5, atol=1e-6)


def test_pad_rejects_mixed_widths():
    with pytest.raises(ValueError):
        pad_features_to_max([np.ones((2, 3)), np.ones((2, 4))])
