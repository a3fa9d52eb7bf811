"""End-to-end orchestration over a workspace directory.

Layout under the workspace root::

    data/                      synthetic corpus (manifest.csv, wav/, seq/)
    features/                  records.csv, spec/<id>.emns, seq/<id>.emns
    folds/fold<k>/             genotype, selection, probabilities, metrics
    reports/ua_table.csv       per-fold and mean unweighted accuracy
"""

from __future__ import annotations

import csv
import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..darts import Genotype, SearchResult, build_derived_network, search, write_history
from ..features import extract_spectrogram, ingest_feature_matrix, pad_features_to_max, read_feature_matrix, write_feature_matrix
from ..fusion import BranchOutputs, FusionNet, train_fusion
from ..rnn import CellBank, RnnCellGraph, SequenceModel, default_bank, select_cell, stable_seed, write_selection
from ..rnn.branch import Selection
from ..training import Split, predict_proba, train_classifier
from .config import PipelineConfig
from .data import Fold, UtteranceRecord, make_folds, read_manifest, write_manifest
from .metrics import EMOTIONS, MetricsReport

log = logging.getLogger(__name__)

BRANCHES = ("spectrogram", "sequence")


class MissingFeaturesError(FileNotFoundError):
    pass


# -- features ----------------------------------------------------------------


class FeatureStore:
    """Extracted spectrograms and ingested sequence matrices on disk."""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def records_path(self) -> Path:
        return self.root / "records.csv"

    def path(self, kind: str, uid: str) -> Path:
        return self.root / ("spec" if kind == "spectrogram" else "seq") / f"{uid}.emns"

    def build(self, manifest, cfg: PipelineConfig) -> list[UtteranceRecord]:
        """Spectrograms from each WAV, validated copies of each sequence
        matrix; paths in the manifest are relative to its directory."""
        manifest = Path(manifest)
        base = manifest.parent
        records = read_manifest(manifest)
        (self.root / "spec").mkdir(parents=True, exist_ok=True)
        (self.root / "seq").mkdir(parents=True, exist_ok=True)
        for r in records:
            if not r.path:
                raise MissingFeaturesError(f"{r.id}: manifest row has no audio path")
            write_feature_matrix(self.path("spectrogram", r.id), extract_spectrogram(base / r.path, cfg.features).data)
            if r.seq_path:
                src = base / r.seq_path
                if not src.is_file():
                    raise MissingFeaturesError(f"{r.id}: sequence features {src} not found")
                ingest_feature_matrix(src)
                shutil.copyfile(src, self.path("sequence", r.id))
        write_manifest(records, self.records_path)
        return records

    def records(self) -> list[UtteranceRecord]:
        if not self.records_path.is_file():
            raise MissingFeaturesError(f"no extracted features under {self.root}; run the features step first")
        return read_manifest(self.records_path)

    def load(self, kind: str, uid: str) -> np.ndarray:
        p = self.path(kind, uid)
        if not p.is_file():
            raise MissingFeaturesError(f"{kind} features for {uid} not found at {p}")
        return read_feature_matrix(p)


def _labels(records) -> np.ndarray:
    return np.array([r.label_index for r in records], dtype=np.int64)


def spectrogram_splits(store: FeatureStore, fold: Fold) -> tuple[Split, Split, Split]:
    """[N,1,H,W] inputs standardised with the training split's scalar
    mean and deviation."""
    raw = [np.stack([store.load("spectrogram", r.id) for r in part])[:, None] for part in (fold.train, fold.val, fold.test)]
    mu, sd = float(raw[0].mean()), float(raw[0].std()) or 1.0
    parts = (fold.train, fold.val, fold.test)
    return tuple(Split(((x - mu) / sd).astype(np.float32), _labels(p), ids=[r.id for r in p]) for x, p in zip(raw, parts))


def sequence_splits(store: FeatureStore, fold: Fold) -> tuple[Split, Split, Split]:
    """Per-column standardisation from training frames, then zero padding
    to the longest utterance of the fold with frame masks."""
    parts = (fold.train, fold.val, fold.test)
    mats = [[store.load("sequence", r.id) for r in p] for p in parts]
    frames = np.concatenate(mats[0])
    mu, sd = frames.mean(axis=0), frames.std(axis=0)
    sd[sd == 0] = 1.0
    t_max = max(m.shape[0] for group in mats for m in group)
    out = []
    for group, p in zip(mats, parts):
        x, mask = pad_features_to_max([(m - mu) / sd for m in group] + [np.zeros((t_max, len(mu)))])
        x, mask = x[:-1], mask[:-1]
        x *= mask[..., None]
        out.append(Split(x, _labels(p), mask, [r.id for r in p]))
    return tuple(out)


# -- per-fold artifacts ------------------------------------------------------


def fold_dir(workspace, k: int) -> Path:
    d = Path(workspace) / "folds" / f"fold{k}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_probabilities(path, ids: list[str], prob: np.ndarray, labels: np.ndarray) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["utterance_id"] + [f"p{k}" for k in range(prob.shape[1])] + ["label"])
        for uid, row, y in zip(ids, prob, labels):
            w.writerow([uid] + [f"{v:.8g}" for v in row] + [int(y)])


def read_probabilities(path) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFeaturesError(f"branch outputs {path} not found; train the branch first")
    prob, labels = {}, {}
    with path.open(newline="") as f:
        for row in csv.DictReader(f):
            prob[row["utterance_id"]] = np.array([float(row[f"p{k}"]) for k in range(len(EMOTIONS))])
            labels[row["utterance_id"]] = int(row["label"])
    return prob, labels


def write_metrics(path, report: MetricsReport, extra: dict | None = None) -> None:
    row = {**(extra or {}), **report.row()}
    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(row))
        w.writeheader()
        w.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})


def read_metrics(path) -> dict:
    with Path(path).open(newline="") as f:
        return next(csv.DictReader(f))


# -- branches ----------------------------------------------------------------


@dataclass
class BranchRun:
    branch: str
    model: object
    metrics: MetricsReport
    val_probabilities: np.ndarray
    test_probabilities: np.ndarray
    artifact: object = None
    history: list = field(default_factory=list)


def job_seed(cfg: PipelineConfig, fold: Fold, *names: str) -> int:
    return stable_seed(cfg.seed, f"fold{fold.index}", *names) % (2**32)


def run_search(store: FeatureStore, fold: Fold, cfg: PipelineConfig) -> SearchResult:
    train, val, _ = spectrogram_splits(store, fold)
    net_cfg = replace(cfg.spectrogram.network, seed=job_seed(cfg, fold, "spectrogram", "supernet"))
    schedule = replace(cfg.spectrogram.search, seed=job_seed(cfg, fold, "spectrogram", "search"))

    class _Data:
        pass

    data = _Data()
    data.train, data.val = train, val
    return search(data, net_cfg, schedule)


def _finish(branch, model, train_result, val, test) -> BranchRun:
    pv, pt = predict_proba(model, val), predict_proba(model, test)
    report = MetricsReport.compute(pt.argmax(axis=1), test.y, len(EMOTIONS), model.param_count())
    report.extra = {"best_epoch": train_result.best_epoch, "val_ua": train_result.best_val_ua}
    return BranchRun(branch, model, report, pv, pt, history=train_result.history)


def retrain_spectrogram(genotype: Genotype, store: FeatureStore, fold: Fold, cfg: PipelineConfig) -> BranchRun:
    train, val, test = spectrogram_splits(store, fold)
    net = build_derived_network(genotype, cfg.spectrogram.network, seed=job_seed(cfg, fold, "spectrogram", "init"))
    tc = replace(cfg.spectrogram.retrain, seed=job_seed(cfg, fold, "spectrogram", "retrain"))
    run = _finish("spectrogram", net, train_classifier(net, train, val, tc), val, test)
    run.artifact = genotype
    return run


def load_bank(cfg: PipelineConfig) -> CellBank:
    return CellBank.load(cfg.sequence.bank) if cfg.sequence.bank else default_bank()


def _rnn_config(cfg: PipelineConfig, train: Split, fold: Fold):
    rc = cfg.sequence.rnn
    if train.x.shape[-1] != rc.input_dim:
        raise ValueError(f"sequence features have {train.x.shape[-1]} columns but sequence.rnn.input_dim = {rc.input_dim}")
    return replace(rc, seed=job_seed(cfg, fold, "sequence", "init"))


def run_select(store: FeatureStore, fold: Fold, cfg: PipelineConfig) -> Selection:
    train, val, _ = sequence_splits(store, fold)
    tc = replace(cfg.sequence.select, seed=job_seed(cfg, fold, "sequence", "select"))
    return select_cell(load_bank(cfg), train, val, _rnn_config(cfg, train, fold), tc)


def retrain_sequence(cell: RnnCellGraph, store: FeatureStore, fold: Fold, cfg: PipelineConfig) -> BranchRun:
    train, val, test = sequence_splits(store, fold)
    rc = _rnn_config(cfg, train, fold)
    model = SequenceModel(cell, rc, seed=rc.seed)
    tc = replace(cfg.sequence.retrain, seed=job_seed(cfg, fold, "sequence", "retrain"))
    run = _finish("sequence", model, train_classifier(model, train, val, tc), val, test)
    run.artifact = cell
    return run


def train_branch(branch: str, store: FeatureStore, fold: Fold, cfg: PipelineConfig) -> BranchRun:
    """Search (or select), then retrain and report test metrics for the
    best-on-validation checkpoint."""
    if branch == "spectrogram":
        result = run_search(store, fold, cfg)
        run = retrain_spectrogram(result.genotype, store, fold, cfg)
        run.artifact = result
        return run
    if branch == "sequence":
        selection = run_select(store, fold, cfg)
        run = retrain_sequence(load_bank(cfg)[selection.best], store, fold, cfg)
        run.artifact = selection
        return run
    raise ValueError(f"unknown branch {branch!r}; choose from {BRANCHES}")


def save_branch_run(run: BranchRun, fold: Fold, out: Path) -> None:
    labels = {"val": _labels(fold.val), "test": _labels(fold.test)}
    write_probabilities(out / f"{run.branch}_val_probs.csv", [r.id for r in fold.val], run.val_probabilities, labels["val"])
    write_probabilities(out / f"{run.branch}_test_probs.csv", [r.id for r in fold.test], run.test_probabilities, labels["test"])
    write_metrics(out / f"{run.branch}_metrics.csv", run.metrics, {"fold": fold.index})
    write_history(run.history, out / f"{run.branch}_train_history.csv")


def save_search(result: SearchResult, out: Path) -> None:
    result.genotype.save(out / "genotype.json")
    write_history(result.history, out / "search_history.csv")


def save_selection(selection: Selection, bank: CellBank, out: Path) -> None:
    write_selection(selection, out / "selection.csv")
    (out / "cell.json").write_text(CellBank([bank[selection.best]]).dumps())


def load_selected_cell(out: Path) -> RnnCellGraph:
    p = out / "cell.json"
    if not p.is_file():
        raise MissingFeaturesError(f"{p} not found; run the select step first")
    return next(iter(CellBank.load(p)))


def load_genotype(out: Path) -> Genotype:
    p = out / "genotype.json"
    if not p.is_file():
        raise MissingFeaturesError(f"{p} not found; run the search step first")
    return Genotype.load(p)


# -- fusion and reporting ----------------------------------------------------


def branch_outputs(out: Path, split: str) -> BranchOutputs:
    spec, labels = read_probabilities(out / f"spectrogram_{split}_probs.csv")
    seq, labels_seq = read_probabilities(out / f"sequence_{split}_probs.csv")
    if labels != labels_seq:
        raise ValueError(f"branches disagree on the {split} labels")
    return BranchOutputs.align(spec, seq, labels)


def fuse_fold(workspace, fold: Fold, cfg: PipelineConfig):
    """Train the fusion net on validation outputs, evaluate on test."""
    out = fold_dir(workspace, fold.index)
    val, test = branch_outputs(out, "val"), branch_outputs(out, "test")
    seed = job_seed(cfg, fold, "fusion")
    result = train_fusion(val, test, FusionNet(seed=seed), replace(cfg.fusion.train, seed=seed))
    val.save(out / "fusion_val_inputs.csv")
    test.save(out / "fusion_test_inputs.csv")
    write_probabilities(out / "fused_test_probs.csv", test.ids, result.probabilities, test.labels)
    write_metrics(out / "fused_metrics.csv", result.metrics, {"fold": fold.index})
    return result


UA_COLUMNS = ("fold", "held_out_session", "spectrogram_ua", "sequence_ua", "fused_ua")


def ua_table(workspace, folds: list[Fold]) -> list[dict]:
    """Per-fold rows plus a mean row (per-fold, then averaged)."""
    rows = []
    for fold in folds:
        out = Path(workspace) / "folds" / f"fold{fold.index}"
        row = {"fold": str(fold.index), "held_out_session": fold.held_out_session}
        for name in ("spectrogram", "sequence", "fused"):
            p = out / f"{name}_metrics.csv"
            if not p.is_file():
                raise MissingFeaturesError(f"{p} not found; fold {fold.index} is incomplete")
            row[f"{name}_ua"] = float(read_metrics(p)["ua"])
        rows.append(row)
    mean = {"fold": "mean", "held_out_session": ""}
    for c in UA_COLUMNS[2:]:
        mean[c] = float(np.mean([r[c] for r in rows]))
    return rows + [mean]


def write_ua_table(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=UA_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def folds_for(store: FeatureStore, selected: list[int] | None = None) -> list[Fold]:
    folds = make_folds(store.records())
    if selected is None:
        return folds
    bad = [k for k in selected if not 0 <= k < len(folds)]
    if bad:
        raise ValueError(f"fold indices {bad} out of range 0..{len(folds) - 1}")
    return [folds[k] for k in selected]


def run_fold(workspace, store: FeatureStore, fold: Fold, cfg: PipelineConfig) -> dict:
    out = fold_dir(workspace, fold.index)
    result = run_search(store, fold, cfg)
    save_search(result, out)
    spec = retrain_spectrogram(result.genotype, store, fold, cfg)
    save_branch_run(spec, fold, out)
    bank = load_bank(cfg)
    selection = run_select(store, fold, cfg)
    save_selection(selection, bank, out)
    seq = retrain_sequence(bank[selection.best], store, fold, cfg)
    save_branch_run(seq, fold, out)
    fused = fuse_fold(workspace, fold, cfg)
    ua = {"spectrogram": spec.metrics.ua, "sequence": seq.metrics.ua, "fused": fused.metrics.ua}
    log.info("fold %d: %s", fold.index, {k: round(v, 4) for k, v in ua.items()})
    return ua


def run_pipeline(workspace, cfg: PipelineConfig, manifest=None) -> list[dict]:
    """Features (if missing), every fold, and the UA table."""
    ws = Path(workspace)
    store = FeatureStore(ws / "features")
    if manifest is not None or not store.records_path.is_file():
        store.build(manifest or ws / "data" / "manifest.csv", cfg)
    folds = folds_for(store)
    for fold in folds:
        run_fold(ws, store, fold, cfg)
    rows = ua_table(ws, folds)
    write_ua_table(rows, ws / "reports" / "ua_table.csv")
    return rows

