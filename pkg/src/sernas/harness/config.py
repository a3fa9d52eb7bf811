"""Pipeline configuration and its flat ``key = value`` text form.

Keys are dotted paths into nested dataclasses, e.g.
``spectrogram.search.epochs = 50``. Defaults are the published
hyperparameters; the ``desk`` profile shrinks the workload so the full
pipeline runs on one CPU in minutes. Per-job seeds are derived from the
single root ``seed`` and are not configurable individually.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

from ..darts import NetworkConfig, SearchSchedule
from ..features import SpectrogramConfig
from ..rnn import RnnBranchConfig
from ..training import TrainConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass
class SpectrogramBranchConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    search: SearchSchedule = field(default_factory=SearchSchedule)
    retrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=50, optimizer="sgd", lr=0.025, momentum=0.9, weight_decay=3e-4, grad_clip=5.0)
    )


@dataclass
class SequenceBranchConfig:
    rnn: RnnBranchConfig = field(default_factory=RnnBranchConfig)
    select: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, lr=1e-3, select_on="last"))
    retrain: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50, lr=1e-3))
    # JSON cell bank; empty means the built-in bank
    bank: str = ""


@dataclass
class FusionConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, lr=1e-3, batch_size=4, select_on="last"))


@dataclass
class PipelineConfig:
    seed: int = 0
    features: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    spectrogram: SpectrogramBranchConfig = field(default_factory=SpectrogramBranchConfig)
    sequence: SequenceBranchConfig = field(default_factory=SequenceBranchConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)


PROFILES: dict[str, dict[str, str]] = {
    "paper": {},
    "desk": {
        "spectrogram.network.channels": "4",
        "spectrogram.network.num_nodes": "2",
        "spectrogram.network.stem_pool": "14",
        "spectrogram.search.epochs": "8",
        "spectrogram.retrain.epochs": "30",
        "sequence.rnn.hidden": "16",
        "sequence.rnn.input_dim": "32",
        "sequence.select.epochs": "15",
        "sequence.select.lr": "0.003",
        "sequence.retrain.epochs": "15",
        "sequence.retrain.lr": "0.003",
    },
}

# structured fields that have no flat text form
_SKIP = {"signatures"}


def _is_config(value) -> bool:
    return dataclasses.is_dataclass(value) and not isinstance(value, type)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def flatten(cfg, prefix: str = "") -> dict[str, str]:
    """Every configurable leaf as ``dotted.key -> text``."""
    out = {}
    for f in dataclasses.fields(cfg):
        if f.name in _SKIP or (prefix and f.name == "seed"):
            continue
        value = getattr(cfg, f.name)
        key = prefix + f.name
        if _is_config(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = _format(value)
    return out


def _scalar(text: str, like):
    t = text.strip()
    if isinstance(like, bool):
        if t.lower() in ("true", "1", "yes", "on"):
            return True
        if t.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, enum.Enum):
        return type(like)(t)
    if isinstance(like, int):
        return int(t)
    if isinstance(like, float):
        return float(t)
    if like is None:
        for cast in (int, float):
            try:
                return cast(t)
            except ValueError:
                pass
    return t


def _parse(text: str, default):
    t = text.strip()
    if t.lower() == "none":
        return None
    if isinstance(default, (tuple, list)) or (default is None and "," in t):
        like = default[0] if default else None
        return tuple(_scalar(p, like) for p in t.split(",") if p.strip())
    return _scalar(t, default)


def build(cls, flat: dict[str, str], prefix: str = "", base=None):
    """Instantiate ``cls`` from ``base`` (or its defaults) with overrides
    from ``flat``; constructors rerun their validation."""
    base = base if base is not None else cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        value = getattr(base, f.name)
        key = prefix + f.name
        if _is_config(value):
            kwargs[f.name] = build(type(value), flat, key + ".", value)
        elif key in flat and f.name not in _SKIP and not (prefix and f.name == "seed"):
            try:
                kwargs[f.name] = _parse(flat[key], value)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        else:
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or cls.__name__}: {exc}") from exc


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key] = value
    return out


def parse_overrides(items: list[str]) -> dict[str, str]:
    return parse_text("\n".join(items), "--set")


def load_config(path=None, profile: str = "paper", overrides: dict[str, str] | None = None) -> PipelineConfig:
    """Profile defaults, then the config file, then explicit overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    flat = dict(PROFILES[profile])
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        flat.update(parse_text(p.read_text(), str(p)))
    flat.update(overrides or {})
    known = set(flatten(PipelineConfig()))
    unknown = sorted(set(flat) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return build(PipelineConfig, flat)


def dump_config(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten(cfg).items())
