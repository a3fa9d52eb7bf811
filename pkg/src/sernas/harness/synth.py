"""Synthetic stand-in corpus: tone-pattern WAVs plus sequence features.

Each class has a harmonic signature (pitch, bandwidth, loudness, amplitude
and pitch modulation) that survives coarse spectrogram pooling. Each
speaker shifts pitch. Sequence features carry the class as a pattern in a
band of channels. A small, disjoint fraction of utterances loses the cue in
exactly one modality, so the two branches err on different utterances and
fusion has something to gain.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..features import Waveform, write_feature_matrix, write_wav
from .data import UtteranceRecord, write_manifest
from .metrics import EMOTIONS


@dataclass(frozen=True)
class ClassSignature:
    f0: float
    bandwidth: float
    amplitude: float
    am_rate: float = 0.0
    am_depth: float = 0.0
    vibrato_rate: float = 0.0
    vibrato_depth: float = 0.0


DEFAULT_SIGNATURES = (
    ClassSignature(f0=140.0, bandwidth=1500.0, amplitude=0.25),
    ClassSignature(f0=220.0, bandwidth=5000.0, amplitude=0.5, am_rate=7.0, am_depth=0.5),
    ClassSignature(f0=260.0, bandwidth=3000.0, amplitude=0.35, vibrato_rate=5.0, vibrato_depth=0.06),
    ClassSignature(f0=110.0, bandwidth=600.0, amplitude=0.15, am_rate=1.5, am_depth=0.3),
)


@dataclass
class SynthConfig:
    num_sessions: int = 2
    speakers_per_session: int = 2
    utterances_per_class: int = 40
    signatures: tuple[ClassSignature, ...] = DEFAULT_SIGNATURES
    # noise scales the audio floor (0.01 * noise) and the feature noise (0.8 * noise)
    noise: float = 1.0
    # probability that one modality (never both) loses its class cue
    cue_dropout: float = 0.06
    sample_rate: int = 16000
    min_duration: float = 2.0
    max_duration: float = 5.0
    speaker_pitch_spread: float = 0.1
    utterance_pitch_jitter: float = 0.08
    seq_speaker_spread: float = 0.2
    max_harmonics: int = 24
    seq_dim: int = 32
    seq_band: int = 8
    seq_frame_rate: float = 6.0
    seq_cue_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_sessions < 2:
            raise ValueError("at least two sessions are needed for leave-one-session-out")
        if self.speakers_per_session < 1 or self.utterances_per_class < 1:
            raise ValueError("need at least one speaker and one utterance per class")
        if len(self.signatures) != len(EMOTIONS):
            raise ValueError(f"need one signature per class, got {len(self.signatures)}")
        if not 0 <= self.cue_dropout <= 0.5:
            raise ValueError("cue_dropout must lie in [0, 0.5]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not 0 < self.seq_band <= self.seq_dim:
            raise ValueError("the cue band must fit inside the feature width")
        if not 0 < self.min_duration <= self.max_duration:
            raise ValueError("invalid duration range")
        self.signatures = tuple(s if isinstance(s, ClassSignature) else ClassSignature(**s) for s in self.signatures)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["signatures"] = [asdict(s) for s in self.signatures]
        return d


def class_patterns(cfg: SynthConfig) -> np.ndarray:
    """Fixed +-1 patterns in the cue band, one row per class."""
    rng = np.random.default_rng([cfg.seed, 7919])
    while True:
        p = rng.choice([-1.0, 1.0], size=(len(EMOTIONS), cfg.seq_band))
        if len({tuple(r) for r in p}) == len(p):
            return p


def tone(sig: ClassSignature, duration: float, rate: int, pitch_factor: float, max_harmonics: int, rng) -> np.ndarray:
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    f0 = sig.f0 * pitch_factor * (1 + sig.vibrato_depth * np.sin(2 * np.pi * sig.vibrato_rate * t))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    count = int(min(max_harmonics, max(1, sig.bandwidth // (sig.f0 * pitch_factor))))
    offsets = rng.uniform(0, 2 * np.pi, count)
    x = np.zeros(n)
    for k in range(1, count + 1):
        x += np.sin(k * phase + offsets[k - 1]) / np.sqrt(k)
    if sig.am_depth:
        x *= 1 - sig.am_depth * 0.5 * (1 + np.sin(2 * np.pi * sig.am_rate * t))
    ramp = min(n // 2, int(0.02 * rate))
    if ramp:
        env = np.ones(n)
        env[:ramp] = np.linspace(0, 1, ramp)
        env[-ramp:] = np.linspace(1, 0, ramp)
        x *= env
    return sig.amplitude * x / max(np.abs(x).max(), 1e-12)


def speaker_pitch(cfg: SynthConfig, session: int, speaker: int) -> float:
    rng = np.random.default_rng([cfg.seed, 104729, session, speaker])
    return 1.0 + rng.uniform(-cfg.speaker_pitch_spread, cfg.speaker_pitch_spread)


def speaker_offset(cfg: SynthConfig, session: int, speaker: int) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 15485863, session, speaker])
    off = rng.normal(0, cfg.seq_speaker_spread, cfg.seq_dim)
    off[: cfg.seq_band] = 0.0
    return off


@dataclass
class Utterance:
    record: UtteranceRecord
    audio: np.ndarray
    features: np.ndarray
    dropped: str = ""


def make_utterance(cfg: SynthConfig, session: int, speaker: int, label: int, index: int, patterns: np.ndarray) -> Utterance:
    rng = np.random.default_rng([cfg.seed, session, speaker, label, index])
    sig = cfg.signatures[label]
    duration = rng.uniform(cfg.min_duration, cfg.max_duration)
    u = rng.uniform()
    dropped = "spectrogram" if u < cfg.cue_dropout else "sequence" if u < 2 * cfg.cue_dropout else ""
    loudness = rng.uniform(0.8, 1.2)
    pitch = speaker_pitch(cfg, session, speaker) * (1 + rng.uniform(-cfg.utterance_pitch_jitter, cfg.utterance_pitch_jitter))
    voiced = tone(sig, duration, cfg.sample_rate, pitch, cfg.max_harmonics, rng)
    if dropped == "spectrogram":
        voiced = np.zeros_like(voiced)
    audio = np.clip(loudness * voiced + rng.normal(0, 0.01 * cfg.noise, len(voiced)), -1.0, 1.0)

    frames = max(2, int(round(duration * cfg.seq_frame_rate)))
    feats = rng.normal(0, 0.8 * cfg.noise, (frames, cfg.seq_dim)) + speaker_offset(cfg, session, speaker)
    if dropped != "sequence":
        # the cue occupies a contiguous burst covering at least half the frames
        span = int(rng.integers((frames + 1) // 2, frames + 1))
        start = int(rng.integers(0, frames - span + 1))
        feats[start : start + span, : cfg.seq_band] += cfg.seq_cue_strength * patterns[label]

    sid, spk = f"S{session + 1}", f"S{session + 1}_spk{speaker + 1}"
    uid = f"{spk}_{EMOTIONS[label]}_{index:03d}"
    record = UtteranceRecord(uid, EMOTIONS[label], sid, spk, f"wav/{uid}.wav", f"seq/{uid}.emns")
    return Utterance(record, audio, feats.astype(np.float32), dropped)


def iter_utterances(cfg: SynthConfig):
    patterns = class_patterns(cfg)
    for s in range(cfg.num_sessions):
        for j in range(cfg.speakers_per_session):
            for c in range(len(EMOTIONS)):
                for k in range(cfg.utterances_per_class):
                    yield make_utterance(cfg, s, j, c, k, patterns)


def synth_dataset(cfg: SynthConfig, out_dir) -> list[UtteranceRecord]:
    """Write wav/, seq/, manifest.csv and synth_config.json under
    ``out_dir``; record paths are relative to it."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "seq").mkdir(parents=True, exist_ok=True)
    records, dropped = [], []
    for utt in iter_utterances(cfg):
        write_wav(out / utt.record.path, Waveform(utt.audio, cfg.sample_rate))
        write_feature_matrix(out / utt.record.seq_path, utt.features)
        records.append(utt.record)
        if utt.dropped:
            dropped.append([utt.record.id, utt.dropped])
    write_manifest(records, out / "manifest.csv")
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "cue_dropout.csv").write_text("id,modality\n" + "".join(f"{i},{m}\n" for i, m in dropped))
    return records
