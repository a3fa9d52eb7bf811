"""Decision-level fusion of the two branches' class probabilities."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, affine, concat, leaky_relu, parameter, softmax, uniform_init
from .harness.metrics import MetricsReport
from .training import Split, TrainConfig, predict_proba, train_classifier

LAYERS = ((8, 8), (8, 4), (4, 4))


class FusionNet:
    """8 -> 8 -> 4 -> 4 perceptron with leaky ReLU between layers."""

    def __init__(self, seed: int = 0, zero: bool = False):
        rng = np.random.default_rng(seed)
        self.weights, self.biases = [], []
        for n_in, n_out in LAYERS:
            if zero:
                self.weights.append(parameter(np.zeros((n_in, n_out))))
                self.biases.append(parameter(np.zeros(n_out)))
            else:
                self.weights.append(uniform_init(rng, (n_in, n_out), n_in))
                self.biases.append(uniform_init(rng, (n_out,), n_in))

    def parameters(self) -> list[Tensor]:
        return self.weights + self.biases

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def logits(self, x: Tensor) -> Tensor:
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = affine(h, w, b)
            if i < len(LAYERS) - 1:
                h = leaky_relu(h)
        return h


def _check_probabilities(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float32)
    if p.ndim != 2 or p.shape[1] != 4:
        raise ValueError(f"{name}: expected [B,4] probabilities, got shape {p.shape}")
    if (p < -1e-6).any() or not np.allclose(p.sum(axis=1), 1.0, atol=1e-4):
        raise ValueError(f"{name}: rows are not probability distributions")
    return p


def fuse(p_spec, p_seq, net: FusionNet) -> np.ndarray:
    """Fused class probabilities [B,4]."""
    a = _check_probabilities(p_spec, "spectrogram probabilities")
    b = _check_probabilities(p_seq, "sequence probabilities")
    if len(a) != len(b):
        raise ValueError("branch outputs differ in batch size")
    x = concat([Tensor(a), Tensor(b)], axis=1)
    return softmax(net.logits(x), axis=-1).data


@dataclass
class BranchOutputs:
    """Aligned per-utterance probabilities from both branches."""

    ids: list[str]
    p_spec: np.ndarray
    p_seq: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        self.p_spec = _check_probabilities(self.p_spec, "spectrogram probabilities")
        self.p_seq = _check_probabilities(self.p_seq, "sequence probabilities")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.p_spec) == len(self.p_seq) == len(self.labels) == n):
            raise ValueError("branch outputs are not aligned")

    @classmethod
    def align(cls, spec: dict[str, np.ndarray], seq: dict[str, np.ndarray], labels: dict[str, int]) -> "BranchOutputs":
        if set(spec) != set(seq) or set(spec) != set(labels):
            missing = sorted(set(spec) ^ set(seq)) or sorted(set(spec) ^ set(labels))
            raise ValueError(f"utterance ids do not match between branches: {missing[:5]}")
        ids = sorted(spec)
        return cls(ids, np.stack([spec[i] for i in ids]), np.stack([seq[i] for i in ids]), np.array([labels[i] for i in ids]))

    def split(self) -> Split:
        return Split(np.concatenate([self.p_spec, self.p_seq], axis=1), self.labels, ids=self.ids)

    def save(self, path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["utterance_id"] + [f"spec_p{k}" for k in range(4)] + [f"seq_p{k}" for k in range(4)] + ["label"])
            for i, uid in enumerate(self.ids):
                w.writerow([uid] + [f"{v:.8g}" for v in self.p_spec[i]] + [f"{v:.8g}" for v in self.p_seq[i]] + [int(self.labels[i])])

    @classmethod
    def load(cls, path) -> "BranchOutputs":
        ids, a, b, y = [], [], [], []
        with Path(path).open(newline="") as f:
            for row in csv.DictReader(f):
                ids.append(row["utterance_id"])
                a.append([float(row[f"spec_p{k}"]) for k in range(4)])
                b.append([float(row[f"seq_p{k}"]) for k in range(4)])
                y.append(int(row["label"]))
        return cls(ids, np.array(a), np.array(b), np.array(y))


@dataclass
class FusionResult:
    net: FusionNet
    metrics: MetricsReport
    probabilities: np.ndarray


def train_fusion(train: BranchOutputs, test: BranchOutputs, net: FusionNet | None = None, cfg: TrainConfig | None = None) -> FusionResult:
    """Cross-entropy training on ``train``, metrics on ``test``."""
    cfg = cfg or TrainConfig(epochs=100, lr=1e-3, batch_size=4, select_on="last")
    net = net or FusionNet(seed=cfg.seed)
    train_classifier(net, train.split(), None, cfg)
    prob = predict_proba(net, test.split())
    metrics = MetricsReport.compute(prob.argmax(axis=1), test.labels, 4, net.param_count())
    return FusionResult(net, metrics, prob)
