"""Fixed-shape spectrograms from audio and ingestion of external sequence features."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

MAGIC = b"EMNS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBII")


class FeatureFormatError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SpectrogramConfig:
    sample_rate: int = 16000
    target_duration: float = 8.0
    window_ms: float = 25.0
    overlap_ms: float = 14.0
    window: str = "hamming"
    feature_bins: int = 140
    output_rows: int = 140

    def __post_init__(self):
        if not 0 < self.overlap_ms < self.window_ms:
            raise ValueError("overlap must be positive and shorter than the window")
        if self.feature_bins > self.window_length // 2 + 1:
            raise ValueError(f"{self.feature_bins} bins exceed the {self.window_length // 2 + 1} FFT bins of the window")

    @property
    def window_length(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop(self) -> int:
        return self.window_length - int(round(self.overlap_ms * self.sample_rate / 1000))

    @property
    def num_samples(self) -> int:
        return int(round(self.target_duration * self.sample_rate))

    @property
    def num_frames(self) -> int:
        return frame_count(self.num_samples, self.window_length, self.hop)

    @property
    def output_shape(self) -> tuple[int, int]:
        return (self.output_rows, self.feature_bins)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class FeatureMatrix:
    data: np.ndarray
    kind: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("spectrogram", "sequence"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if np.ndim(self.data) != 2:
            raise ValueError("feature matrices are 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def frame_count(num_samples: int, window: int, hop: int) -> int:
    if window > num_samples:
        raise ValueError(f"window of {window} samples is longer than the {num_samples}-sample signal")
    return (num_samples - window) // hop + 1


def load_wav(path) -> Waveform:
    """Read PCM or float WAV, downmix to mono, scale integers to [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError, struct.error) as exc:
        raise FeatureFormatError(f"{path}: unreadable WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise FeatureFormatError(f"{path}: unsupported sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), w.sample_rate, pcm)


def pad_or_truncate(w: Waveform, target_seconds: float) -> Waveform:
    """Keep the prefix of long signals, zero-pad short ones."""
    if target_seconds <= 0:
        raise ValueError("target duration must be positive")
    n = int(round(target_seconds * w.sample_rate))
    if len(w.samples) >= n:
        return Waveform(w.samples[:n].copy(), w.sample_rate)
    return Waveform(np.concatenate([w.samples, np.zeros(n - len(w.samples))]), w.sample_rate)


def frame_signal(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    n = frame_count(len(samples), window, hop)
    view = np.lib.stride_tricks.sliding_window_view(samples, window)
    return view[::hop][:n]


def pool_rows(data: np.ndarray, target_rows: int) -> np.ndarray:
    rows = data.shape[0]
    if rows < target_rows:
        raise ValueError(f"cannot pool {rows} rows down to {target_rows}")
    base, extra = divmod(rows, target_rows)
    sizes = np.full(target_rows, base)
    sizes[:extra] += 1
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return np.add.reduceat(data.astype(np.float64), starts, axis=0) / sizes[:, None]


def pool_to_shape(m: FeatureMatrix, target_rows: int) -> FeatureMatrix:
    """Non-overlapping average pooling along rows; earlier groups absorb
    the remainder."""
    prov = dict(m.provenance, pooled_from=m.shape[0])
    return FeatureMatrix(pool_rows(m.data, target_rows).astype(np.float32), m.kind, prov)


def spectrogram(w: Waveform, cfg: SpectrogramConfig = SpectrogramConfig(), source: str = "") -> FeatureMatrix:
    """log(1 + |FFT|) of Hamming-windowed frames, first ``feature_bins``
    bins, pooled along time to ``output_rows`` rows (time x frequency)."""
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"sample rate {w.sample_rate} Hz does not match the configured {cfg.sample_rate} Hz")
    if len(w.samples) != cfg.num_samples:
        raise ValueError(f"waveform lasts {w.duration:.3f} s, expected {cfg.target_duration} s")
    frames = frame_signal(w.samples, cfg.window_length, cfg.hop)
    win = get_window(cfg.window, cfg.window_length, fftbins=True)
    mag = np.abs(np.fft.rfft(frames * win, axis=1))[:, : cfg.feature_bins]
    logmag = np.log1p(mag)
    pooled = pool_rows(logmag, cfg.output_rows).astype(np.float32)
    return FeatureMatrix(pooled, "spectrogram", {"source": str(source), "config": cfg.digest()})


def extract_spectrogram(path, cfg: SpectrogramConfig = SpectrogramConfig()) -> FeatureMatrix:
    w = load_wav(path)
    return spectrogram(pad_or_truncate(w, cfg.target_duration), cfg, source=path)


# -- binary matrix files -----------------------------------------------------


def write_feature_matrix(path, data: np.ndarray) -> None:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError("only 2-D matrices can be written")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    Path(path).write_bytes(_HEADER.pack(MAGIC, FORMAT_VERSION, arr.shape[0], arr.shape[1]) + payload.tobytes())


def read_feature_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size :]
    if len(body) != 4 * rows * cols:
        raise FeatureFormatError(f"{path}: header declares {rows}x{cols} values but payload holds {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)


def ingest_feature_matrix(path) -> FeatureMatrix:
    data = read_feature_matrix(path)
    if not np.isfinite(data).all():
        raise FeatureFormatError(f"{path}: non-finite values")
    return FeatureMatrix(data, "sequence", {"source": str(path), "columns": data.shape[1]})


def pad_features_to_max(matrices: list) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad [T_i, D] matrices to [B, T_max, D]; mask marks real frames."""
    arrays = [m.data if isinstance(m, FeatureMatrix) else np.asarray(m) for m in matrices]
    if not arrays:
        raise ValueError("nothing to pad")
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise ValueError(f"matrices disagree on column count: {sorted(dims)}")
    t_max = max(a.shape[0] for a in arrays)
    batch = np.zeros((len(arrays), t_max, dims.pop()), dtype=np.float32)
    mask = np.zeros((len(arrays), t_max), dtype=bool)
    for i, a in enumerate(arrays):
        batch[i, : a.shape[0]] = a
        mask[i, : a.shape[0]] = True
    return batch, mask
