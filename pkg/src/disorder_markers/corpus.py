"""Corpus loading, normalized records, stratified splits and longitudinal views."""

import json
import math
from collections import defaultdict
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Generic, TypeVar

import numpy as np
import pandas as pd

from .chat import (
    DEFAULT_PRECEDENCE,
    AnnotatedUtterance,
    ChatParseError,
    EmptySessionError,
    SessionRecord,
    parse_chat_path,
)
from .labels import COHORT_ORDER, LABEL_ORDER, Cohort, DisorderLabel, Speaker, parse_label

T = TypeVar("T")

DEFAULT_RATIOS = (0.8, 0.1, 0.1)

# Classes smaller than this cannot be spread over three splits
MIN_STRATIFIED_CLASS = 3


class CorpusError(Exception):
    """Raised when a corpus violates a structural invariant."""

    pass


def _noop_echo(_: str) -> None:
    """No-op function for echo when none is provided."""
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    """Normalized, line-delimited interchange record for one participant utterance."""

    record_id: str
    subject_id: str
    cohort: Cohort
    visit: int
    utterance_text: str
    label: DisorderLabel | None
    mmse: int | None = None
    cdr: float | None = None

    def to_json(self) -> str:
        data = asdict(self)
        data["cohort"] = str(self.cohort)
        data["label"] = "excluded" if self.label is None else str(self.label)
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "UtteranceRecord":
        data = json.loads(line)
        return cls(
            record_id=data["record_id"],
            subject_id=data["subject_id"],
            cohort=Cohort(data["cohort"]),
            visit=int(data["visit"]),
            utterance_text=data["utterance_text"],
            label=parse_label(data["label"]),
            mmse=data.get("mmse"),
            cdr=data.get("cdr"),
        )


@dataclass
class DatasetSplit(Generic[T]):
    """Train/validation/test partition of labelled items."""

    train: list[tuple[T, DisorderLabel]]
    validation: list[tuple[T, DisorderLabel]]
    test: list[tuple[T, DisorderLabel]]
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    seed: int = 0

    @property
    def parts(self) -> dict[str, list[tuple[T, DisorderLabel]]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass
class SubjectSessions:
    """All sessions of one subject, ordered by visit."""

    subject_id: str
    cohort: Cohort
    sessions: list[SessionRecord] = field(default_factory=list)

    @property
    def visits(self) -> list[int]:
        return [s.visit_index for s in self.sessions]


@dataclass
class CorpusLoad:
    """Outcome of reading a directory of CHAT files."""

    sessions: list[SessionRecord]
    empty: list[Path] = field(default_factory=list)
    failed: list[tuple[Path, str]] = field(default_factory=list)


def load_corpus(
    corpus_dir: Path,
    precedence: Sequence[DisorderLabel] = DEFAULT_PRECEDENCE,
    echo: Callable[[str], None] | None = None,
) -> CorpusLoad:
    """
    Parse every `.cha` file below a directory.

    Files without a participant tier and files that fail to parse are skipped
    with a warning; the caller decides whether the remainder is usable.

    Raises:
        CorpusError: If the directory contains no `.cha` files
    """
    if echo is None:
        echo = _noop_echo

    paths = sorted(corpus_dir.rglob("*.cha"))
    if not paths:
        raise CorpusError(f"No .cha files found in {corpus_dir}")
    echo(f"Found {len(paths)} CHAT file(s)")

    result = CorpusLoad(sessions=[])
    for path in paths:
        try:
            result.sessions.append(parse_chat_path(path, precedence=precedence, warn_callback=echo))
        except EmptySessionError:
            echo(f"Warning: {path.name} has no participant utterances, skipped")
            result.empty.append(path)
        except ChatParseError as e:
            echo(f"Warning: could not parse {path.name}: {e}")
            result.failed.append((path, str(e)))
    return result


def records_from_sessions(sessions: Iterable[SessionRecord]) -> list[UtteranceRecord]:
    """Flatten sessions into one record per participant utterance, excluded ones included."""
    records = []
    for session in sessions:
        participant = [u for u in session.utterances if u.speaker is Speaker.PARTICIPANT]
        for i, utt in enumerate(participant):
            records.append(
                UtteranceRecord(
                    record_id=f"{session.subject_id}-{session.visit_index}-{i:03d}",
                    subject_id=session.subject_id,
                    cohort=session.cohort,
                    visit=session.visit_index,
                    utterance_text=utt.text,
                    label=utt.label,
                    mmse=session.mmse,
                    cdr=session.cdr,
                )
            )
    return records


def sessions_from_records(records: Iterable[UtteranceRecord]) -> list[SessionRecord]:
    """Rebuild SessionRecords from normalized records (cleaned text only)."""
    grouped: dict[tuple[str, int], list[UtteranceRecord]] = defaultdict(list)
    for record in records:
        grouped[(record.subject_id, record.visit)].append(record)

    sessions = []
    for (subject_id, visit), group in sorted(grouped.items()):
        first = group[0]
        utterances = [
            AnnotatedUtterance(
                raw=r.utterance_text,
                text=r.utterance_text,
                speaker=Speaker.PARTICIPANT,
                label=r.label,
            )
            for r in group
        ]
        sessions.append(
            SessionRecord(
                subject_id=subject_id,
                cohort=first.cohort,
                visit_index=visit,
                utterances=utterances,
                mmse=first.mmse,
                cdr=first.cdr,
            )
        )
    return sessions


def write_records(records: Iterable[UtteranceRecord], path: Path) -> Path:
    """Write records as JSON lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.to_json() + "\n")
    return path


def read_records(path: Path) -> list[UtteranceRecord]:
    """Read records written by write_records."""
    with open(path, encoding="utf-8") as f:
        return [UtteranceRecord.from_json(line) for line in f if line.strip()]


def _largest_remainder(counts: dict[DisorderLabel, int], ratio: float, total: int) -> dict:
    """Per-class quotas that sum exactly to `total` and stay within one of n_c * ratio."""
    exact = {label: n * ratio for label, n in counts.items()}
    quotas = {label: math.floor(q + 1e-9) for label, q in exact.items()}
    remaining = total - sum(quotas.values())
    by_remainder = sorted(counts, key=lambda label: (-(exact[label] - quotas[label]), label.index))
    for label in by_remainder[: max(remaining, 0)]:
        quotas[label] += 1
    return quotas


def stratified_split(
    corpus: Sequence[tuple[T, DisorderLabel]],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
    warn_callback: Callable[[str], None] | None = None,
) -> DatasetSplit[T]:
    """
    Split labelled items into train/validation/test with per-class proportions preserved.

    The split is at item (utterance) level; subjects may appear in several
    splits. Classes with fewer than three items go wholly to train.

    Args:
        corpus: (item, label) pairs
        ratios: Train, validation and test fractions summing to 1
        seed: Seed for the per-class shuffles
        warn_callback: Called for every class too small to stratify

    Returns:
        DatasetSplit whose parts keep the corpus order

    Raises:
        CorpusError: If the corpus is empty or the ratios are invalid
    """
    if not corpus:
        raise CorpusError("Cannot split an empty corpus")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"Ratios must be three non-negative fractions summing to 1: {ratios}")

    by_class: dict[DisorderLabel, list[int]] = defaultdict(list)
    for i, (_, label) in enumerate(corpus):
        by_class[label].append(i)

    assignment = ["train"] * len(corpus)
    stratified = {}
    for label in LABEL_ORDER:
        indices = by_class.get(label, [])
        if not indices:
            continue
        if len(indices) < MIN_STRATIFIED_CLASS:
            if warn_callback:
                warn_callback(
                    f"Warning: class {label} has {len(indices)} item(s); placed wholly in train"
                )
            continue
        stratified[label] = len(indices)

    n = sum(stratified.values())
    _, val_ratio, test_ratio = ratios
    test_quota = _largest_remainder(stratified, test_ratio, round(n * test_ratio))
    val_quota = _largest_remainder(stratified, val_ratio, round(n * val_ratio))

    rng = np.random.default_rng(seed)
    for label in LABEL_ORDER:
        if label not in stratified:
            continue
        shuffled = rng.permutation(by_class[label])
        n_test, n_val = test_quota[label], val_quota[label]
        for i in shuffled[:n_test]:
            assignment[i] = "test"
        for i in shuffled[n_test : n_test + n_val]:
            assignment[i] = "validation"

    parts: dict[str, list] = {"train": [], "validation": [], "test": []}
    for item, part in zip(corpus, assignment, strict=True):
        parts[part].append(item)
    return DatasetSplit(ratios=tuple(ratios), seed=seed, **parts)


def write_split_manifest(split: DatasetSplit[UtteranceRecord], path: Path) -> Path:
    """Write the record ids of each split plus the seed and ratios."""
    manifest = {
        "seed": split.seed,
        "ratios": list(split.ratios),
        **{name: [record.record_id for record, _ in items] for name, items in split.parts.items()},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_split_manifest(path: Path, records: Sequence[UtteranceRecord]) -> DatasetSplit[UtteranceRecord]:
    """Rebuild a split from its manifest and the record file it was made from."""
    manifest = json.loads(path.read_text(encoding="utf-8"))
    by_id = {r.record_id: r for r in records}
    parts = {}
    for name in ("train", "validation", "test"):
        try:
            parts[name] = [(by_id[rid], by_id[rid].label) for rid in manifest[name]]
        except KeyError as e:
            raise CorpusError(f"Split manifest references unknown record {e}") from None
    return DatasetSplit(ratios=tuple(manifest["ratios"]), seed=manifest["seed"], **parts)


def labelled(records: Iterable[UtteranceRecord]) -> list[tuple[UtteranceRecord, DisorderLabel]]:
    """Keep records that carry a label, paired with it."""
    return [(r, r.label) for r in records if r.label is not None]


def group_subjects(sessions: Iterable[SessionRecord]) -> list[SubjectSessions]:
    """
    Group sessions per subject, ordered by visit.

    The cohort of a subject is the cohort of its last session.

    Raises:
        CorpusError: If a subject's visits are not 1, 2, ..., n
    """
    grouped: dict[str, list[SessionRecord]] = defaultdict(list)
    for session in sessions:
        grouped[session.subject_id].append(session)

    subjects = []
    for subject_id in sorted(grouped):
        ordered = sorted(grouped[subject_id], key=lambda s: s.visit_index)
        visits = [s.visit_index for s in ordered]
        if visits != list(range(1, len(visits) + 1)):
            raise CorpusError(f"Subject {subject_id} has non-contiguous visits {visits}")
        subjects.append(SubjectSessions(subject_id, ordered[-1].cohort, ordered))
    return subjects


def longitudinal_subset(
    sessions: Iterable[SessionRecord],
    min_sessions: int = 3,
) -> dict[Cohort, list[SubjectSessions]]:
    """
    Keep subjects with at least `min_sessions` sessions, grouped by cohort.

    Raises:
        CorpusError: If min_sessions < 2
    """
    if min_sessions < 2:
        raise CorpusError(f"min_sessions must be at least 2, got {min_sessions}")
    result: dict[Cohort, list[SubjectSessions]] = {cohort: [] for cohort in COHORT_ORDER}
    for subject in group_subjects(sessions):
        if len(subject.sessions) >= min_sessions:
            result[subject.cohort].append(subject)
    return result


def class_count_table(sessions: Sequence[SessionRecord]) -> pd.DataFrame:
    """Per-cohort subject, session and class counts of included utterances."""
    rows = []
    for cohort in COHORT_ORDER:
        cohort_sessions = [s for s in sessions if s.cohort is cohort]
        if not cohort_sessions:
            continue
        row = {
            "cohort": str(cohort),
            "subjects": len({s.subject_id for s in cohort_sessions}),
            "sessions": len(cohort_sessions),
        }
        for label in LABEL_ORDER:
            row[str(label)] = sum(
                1 for s in cohort_sessions for u in s.included_utterances if u.label is label
            )
        rows.append(row)
    return pd.DataFrame(rows, columns=["cohort", "subjects", "sessions", *map(str, LABEL_ORDER)])
