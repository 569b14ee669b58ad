"""Session-level digital markers, per-subject series and their longitudinal deltas."""

from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from enum import StrEnum
from pathlib import Path

import numpy as np
import pandas as pd

from .chat import SessionRecord
from .labels import COHORT_ORDER, Cohort, DisorderLabel


class MarkerError(Exception):
    """Raised when a marker or marker change is undefined for its input."""

    pass


class MarkerKind(StrEnum):
    COMMUNICATION = "communication"
    ANOMIA = "anomia"
    DISFLUENCY = "disfluency"
    AGRAMMATISM = "agrammatism"
    INCOHERENCE = "incoherence"
    WORD_FLUENCY = "word-fluency"

    @property
    def label(self) -> DisorderLabel | None:
        """Class whose probability the marker averages (None for baseline kinds)."""
        if self is MarkerKind.COMMUNICATION:
            return DisorderLabel.FLUENT
        if self in DISORDER_KINDS:
            return DisorderLabel(self.value)
        return None

    @property
    def scale(self) -> tuple[float, float]:
        return MARKER_SCALES[self]

    @property
    def from_model(self) -> bool:
        return self.label is not None


DISORDER_KINDS = (MarkerKind.ANOMIA, MarkerKind.DISFLUENCY, MarkerKind.AGRAMMATISM)
MODEL_KINDS = (MarkerKind.COMMUNICATION, *DISORDER_KINDS)
BASELINE_KINDS = (MarkerKind.INCOHERENCE, MarkerKind.WORD_FLUENCY)

MARKER_SCALES: dict[MarkerKind, tuple[float, float]] = {
    MarkerKind.COMMUNICATION: (0.0, 1.0),
    MarkerKind.ANOMIA: (0.0, 100.0),
    MarkerKind.DISFLUENCY: (0.0, 100.0),
    MarkerKind.AGRAMMATISM: (0.0, 100.0),
    MarkerKind.INCOHERENCE: (-1.0, 1.0),
    MarkerKind.WORD_FLUENCY: (0.0, 1.0),
}

# Float slack when checking a value against its kind's scale
_SCALE_TOLERANCE = 1e-9


def _noop_echo(_: str) -> None:
    pass


def marker_from_probabilities(probabilities: np.ndarray, kind: MarkerKind) -> float:
    """
    Unweighted session mean of one class probability; disorder kinds in percent.

    Args:
        probabilities: (n_utterances, 4) class distributions in LABEL_ORDER
        kind: A model-based marker kind

    Raises:
        MarkerError: If there are no utterances or the kind is not model-based
    """
    probabilities = np.asarray(probabilities, dtype=float)
    if probabilities.ndim != 2 or len(probabilities) == 0:
        raise MarkerError("Marker is undefined for a session without included utterances")
    if not kind.from_model:
        raise MarkerError(f"{kind} is not computed from class probabilities")
    value = float(probabilities[:, kind.label.index].mean())
    return value if kind is MarkerKind.COMMUNICATION else 100 * value


def session_marker(predictor, session: SessionRecord, kind: MarkerKind) -> float:
    """Marker of one session from a Predictor's class probabilities."""
    texts = [u.text for u in session.included_utterances]
    if not texts:
        raise MarkerError(f"Session {session.session_id} has no included utterances")
    return marker_from_probabilities(predictor.probabilities(texts), kind)


@dataclass(frozen=True)
class MarkerRecord:
    subject_id: str
    cohort: Cohort
    visit: int
    kind: MarkerKind
    value: float

    def to_json(self) -> dict:
        return {**asdict(self), "cohort": str(self.cohort), "kind": str(self.kind)}

    @classmethod
    def from_json(cls, data: Mapping) -> "MarkerRecord":
        return cls(
            subject_id=data["subject_id"],
            cohort=Cohort(data["cohort"]),
            visit=int(data["visit"]),
            kind=MarkerKind(data["kind"]),
            value=float(data["value"]),
        )


def score_sessions(
    predictor,
    sessions: Iterable[SessionRecord],
    kinds: Sequence[MarkerKind] = MODEL_KINDS,
    echo: Callable[[str], None] | None = None,
) -> list[MarkerRecord]:
    """
    Model-based marker records for every session; sessions without included utterances are skipped.
    """
    echo = echo or _noop_echo
    records = []
    for session in sessions:
        texts = [u.text for u in session.included_utterances]
        if not texts:
            echo(f"Warning: session {session.session_id} has no included utterances, skipped")
            continue
        probabilities = predictor.probabilities(texts)
        for kind in kinds:
            value = marker_from_probabilities(probabilities, kind)
            records.append(MarkerRecord(session.subject_id, session.cohort, session.visit_index, kind, value))
    return records


@dataclass(frozen=True)
class MarkerSeries:
    """One subject's marker values, ordered by visit."""

    subject_id: str
    cohort: Cohort
    kind: MarkerKind
    values: tuple[tuple[int, float], ...]

    def __post_init__(self):
        visits = [v for v, _ in self.values]
        if any(b <= a for a, b in zip(visits, visits[1:], strict=False)):
            raise MarkerError(f"Series of {self.subject_id} is not ordered by visit: {visits}")
        lo, hi = self.kind.scale
        for visit, value in self.values:
            if not lo - _SCALE_TOLERANCE <= value <= hi + _SCALE_TOLERANCE:
                raise MarkerError(f"{self.kind} value {value} at visit {visit} is outside [{lo}, {hi}]")

    @property
    def markers(self) -> np.ndarray:
        return np.array([value for _, value in self.values], dtype=float)

    def __len__(self) -> int:
        return len(self.values)


def build_series(records: Iterable[MarkerRecord], kind: MarkerKind) -> list[MarkerSeries]:
    """Group records of one kind into per-subject series ordered by visit."""
    grouped: dict[str, list[MarkerRecord]] = defaultdict(list)
    for record in records:
        if record.kind is kind:
            grouped[record.subject_id].append(record)
    series = []
    for subject_id in sorted(grouped):
        rows = sorted(grouped[subject_id], key=lambda r: r.visit)
        series.append(
            MarkerSeries(
                subject_id=subject_id,
                cohort=rows[-1].cohort,
                kind=kind,
                values=tuple((r.visit, r.value) for r in rows),
            )
        )
    return series


def _require_two(series: MarkerSeries) -> np.ndarray:
    if len(series) < 2:
        raise MarkerError(f"Subject {series.subject_id} needs at least 2 sessions, has {len(series)}")
    return series.markers


def delta_end_start(series: MarkerSeries) -> float:
    """Last visit's marker minus the first's."""
    values = _require_two(series)
    return float(values[-1] - values[0])


def delta_long(series: MarkerSeries) -> float:
    """Mean change between adjacent sessions."""
    values = _require_two(series)
    return float(np.mean(np.diff(values)))


SUMMARY_COLUMNS = [
    "marker_mean",
    "marker_std",
    "delta_end_start_mean",
    "delta_end_start_std",
    "delta_long_mean",
    "delta_long_std",
    "subjects",
]


def cohort_summary(
    series: Sequence[MarkerSeries],
    kind: MarkerKind,
    warn_callback: Callable[[str], None] | None = None,
) -> pd.DataFrame:
    """
    Per-cohort mean and std of the marker and of both deltas.

    Values are averaged per subject first, then over the cohort; std is the
    population std, so a single-subject cohort has std 0. Cohorts without
    subjects are omitted with a warning.
    """
    warn = warn_callback or _noop_echo
    rows = {}
    for cohort in COHORT_ORDER:
        members = [s for s in series if s.kind is kind and s.cohort is cohort]
        if not members:
            warn(f"Warning: no {cohort} subjects with a {kind} series, cohort omitted")
            continue
        means = [float(s.markers.mean()) for s in members]
        longitudinal = [s for s in members if len(s) >= 2]
        end_start = [delta_end_start(s) for s in longitudinal]
        adjacent = [delta_long(s) for s in longitudinal]
        rows[str(cohort)] = [
            float(np.mean(means)),
            float(np.std(means)),
            float(np.mean(end_start)) if end_start else np.nan,
            float(np.std(end_start)) if end_start else np.nan,
            float(np.mean(adjacent)) if adjacent else np.nan,
            float(np.std(adjacent)) if adjacent else np.nan,
            len(members),
        ]
    frame = pd.DataFrame.from_dict(rows, orient="index", columns=SUMMARY_COLUMNS)
    frame.index.name = "cohort"
    return frame


def summary_table(
    series_by_kind: Mapping[MarkerKind, Sequence[MarkerSeries]],
    warn_callback: Callable[[str], None] | None = None,
) -> pd.DataFrame:
    """Side-by-side cohort summaries, one column block per marker kind."""
    blocks = {str(kind): cohort_summary(series, kind, warn_callback) for kind, series in series_by_kind.items()}
    return pd.concat(blocks, axis=1)


def write_marker_records(records: Iterable[MarkerRecord], path: Path) -> Path:
    """Marker records as a tab-separated table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.to_json() for r in records], columns=["subject_id", "cohort", "visit", "kind", "value"])
    frame.to_csv(path, sep="\t", index=False)
    return path


def read_marker_records(path: Path) -> list[MarkerRecord]:
    frame = pd.read_csv(path, sep="\t", dtype={"subject_id": str})
    return [MarkerRecord.from_json(row) for row in frame.to_dict(orient="records")]
