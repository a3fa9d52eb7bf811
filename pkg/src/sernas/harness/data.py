"""Utterance records, manifests and leave-one-session-out folds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import EMOTIONS

MANIFEST_COLUMNS = ("id", "path", "label", "session_id", "speaker_id", "seq_path")


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    label: str
    session_id: str
    speaker_id: str
    path: str = ""
    seq_path: str = ""

    def __post_init__(self):
        if self.label not in EMOTIONS:
            raise ValueError(f"{self.id}: label {self.label!r} not in {EMOTIONS}")

    @property
    def label_index(self) -> int:
        return EMOTIONS.index(self.label)


def write_manifest(records: list[UtteranceRecord], path) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=MANIFEST_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow({k: getattr(r, k) for k in MANIFEST_COLUMNS})


def read_manifest(path) -> list[UtteranceRecord]:
    """Columns path, label, session_id, speaker_id are required; id defaults
    to the audio file stem and seq_path to empty."""
    records = []
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        missing = {"path", "label", "session_id", "speaker_id"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            rid = row.get("id") or Path(row["path"]).stem
            records.append(UtteranceRecord(rid, row["label"], row["session_id"], row["speaker_id"], row["path"], row.get("seq_path", "") or ""))
    check_records(records)
    return records


def check_records(records: list[UtteranceRecord]) -> None:
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate utterance ids in manifest")
    home: dict[str, str] = {}
    for r in records:
        if home.setdefault(r.speaker_id, r.session_id) != r.session_id:
            raise ValueError(f"speaker {r.speaker_id} appears in sessions {home[r.speaker_id]} and {r.session_id}")


@dataclass
class Fold:
    index: int
    held_out_session: str
    val_speaker: str
    test_speakers: tuple[str, ...]
    train: list[UtteranceRecord] = field(default_factory=list)
    val: list[UtteranceRecord] = field(default_factory=list)
    test: list[UtteranceRecord] = field(default_factory=list)

    @property
    def train_speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.train})


def make_folds(records: list[UtteranceRecord]) -> list[Fold]:
    """One fold per session. In the held-out session, sorted speakers
    alternate: the first speaker validates in even-indexed folds and tests
    in odd-indexed ones."""
    check_records(records)
    ordered = sorted(records, key=lambda r: r.id)
    sessions = sorted({r.session_id for r in ordered})
    if len(sessions) < 2:
        raise ValueError("leave-one-session-out needs at least two sessions")
    folds = []
    for k, session in enumerate(sessions):
        speakers = sorted({r.speaker_id for r in ordered if r.session_id == session})
        if len(speakers) < 2:
            raise ValueError(f"session {session} has a single speaker; cannot split validation and test")
        val_speaker = speakers[0] if k % 2 == 0 else speakers[1]
        test_speakers = tuple(s for s in speakers if s != val_speaker)
        fold = Fold(k, session, val_speaker, test_speakers)
        for r in ordered:
            if r.session_id != session:
                fold.train.append(r)
            elif r.speaker_id == val_speaker:
                fold.val.append(r)
            else:
                fold.test.append(r)
        folds.append(fold)
    return folds
