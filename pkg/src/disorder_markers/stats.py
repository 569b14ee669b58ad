"""Mann-Whitney and Pearson tests, cohort discrimination and marker-behaviour association."""

import itertools
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from scipy import stats as sps  # noqa: E402

from .chat import SessionRecord  # noqa: E402
from .labels import COHORT_ORDER, Cohort  # noqa: E402
from .markers import MarkerKind, MarkerSeries, delta_end_start, delta_long  # noqa: E402

# Largest smaller-sample size for which the exact U distribution is used
EXACT_MAX_SIZE = 8

COHORT_COLOURS = {Cohort.HEALTHY: "tab:green", Cohort.MCI: "tab:orange", Cohort.AD: "tab:red"}

DISCRIMINATION_COLUMNS = ["kind", "quantity", "cohorts", "test", "statistic", "p_value", "method", "n"]


class StatisticsError(Exception):
    """Raised when a test statistic is undefined for its input."""

    pass


class StatMethod(StrEnum):
    MANN_WHITNEY_EXACT = "mann_whitney_exact"
    MANN_WHITNEY_NORMAL = "mann_whitney_normal_approx"
    PEARSON = "pearson"


class Behaviour(StrEnum):
    MMSE = "mmse"
    CDR = "cdr"


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test; `method` records which computation ran."""

    __test__ = False

    statistic: float
    p_value: float
    method: StatMethod
    n: int

    def to_record(self, test: str) -> dict:
        return {"test": test, **asdict(self), "method": str(self.method)}


def _sample(values: Sequence[float], name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        raise StatisticsError(f"Sample {name} is empty")
    return array


def mann_whitney(sample_a: Sequence[float], sample_b: Sequence[float]) -> TestResult:
    """
    Two-sided Mann-Whitney U test; the statistic is U of `sample_a`.

    The exact U distribution is used when the smaller sample has at most
    EXACT_MAX_SIZE values and there are no ties; otherwise the normal
    approximation with continuity and tie correction.

    Raises:
        StatisticsError: If a sample is empty
    """
    a = _sample(sample_a, "a")
    b = _sample(sample_b, "b")
    combined = np.concatenate([a, b])
    tied = np.unique(combined).size < combined.size
    if min(a.size, b.size) <= EXACT_MAX_SIZE and not tied:
        method, scipy_method = StatMethod.MANN_WHITNEY_EXACT, "exact"
    else:
        method, scipy_method = StatMethod.MANN_WHITNEY_NORMAL, "asymptotic"
    if np.ptp(combined) == 0:
        # Every value equal: no rank information at all
        return TestResult(a.size * b.size / 2, 1.0, method, int(combined.size))
    result = sps.mannwhitneyu(a, b, alternative="two-sided", method=scipy_method, use_continuity=True)
    p_value = float(np.clip(result.pvalue, 0.0, 1.0))
    return TestResult(float(result.statistic), p_value, method, int(combined.size))


def pearson(x_values: Sequence[float], y_values: Sequence[float]) -> TestResult:
    """
    Pearson r with a two-sided p from the t distribution on n - 2 degrees of freedom.

    Raises:
        StatisticsError: If n < 3, the lengths differ, or either variable is constant
    """
    x = np.asarray(x_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    if x.size != y.size:
        raise StatisticsError(f"x and y differ in length ({x.size} vs {y.size})")
    if x.size < 3:
        raise StatisticsError(f"Pearson correlation needs at least 3 points, got {x.size}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise StatisticsError("Correlation is undefined when a variable has zero variance")
    result = sps.pearsonr(x, y)
    r = float(np.clip(result.statistic, -1.0, 1.0))
    return TestResult(r, float(np.clip(result.pvalue, 0.0, 1.0)), StatMethod.PEARSON, int(x.size))


def cohort_discrimination(
    series: Sequence[MarkerSeries],
    kind: MarkerKind,
) -> pd.DataFrame:
    """
    Pairwise Mann-Whitney tests between cohorts on subject-mean markers and on Δ end-start.

    Pairs with an empty side are left out.
    """
    members = {c: [s for s in series if s.kind is kind and s.cohort is c] for c in COHORT_ORDER}
    rows = []
    for first, second in itertools.combinations(COHORT_ORDER, 2):
        for quantity, fn in (("marker", lambda s: float(s.markers.mean())), ("delta_end_start", delta_end_start)):
            a = [fn(s) for s in members[first] if quantity == "marker" or len(s) >= 2]
            b = [fn(s) for s in members[second] if quantity == "marker" or len(s) >= 2]
            if not a or not b:
                continue
            result = mann_whitney(a, b)
            rows.append(
                {
                    "kind": str(kind),
                    "quantity": quantity,
                    "cohorts": f"{first} vs {second}",
                    **result.to_record("mann_whitney"),
                }
            )
    return pd.DataFrame(rows, columns=DISCRIMINATION_COLUMNS)


@dataclass(frozen=True)
class AssociationPoint:
    subject_id: str
    cohort: Cohort
    x: float
    y: float


@dataclass
class AssociationResult:
    """
    Marker change vs behaviour across subjects.

    Attributes:
        points: One point per included subject
        result: Pearson test on (x, y) as computed
        sign_adjusted_r: r oriented so that a positive value means worse
            behaviour goes with more decline (negated for CDR)
        excluded: Subject ids left out, with the reason
    """

    behaviour: Behaviour
    points: list[AssociationPoint]
    result: TestResult
    sign_adjusted_r: float
    excluded: dict[str, str] = field(default_factory=dict)

    def point_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{**asdict(p), "cohort": str(p.cohort)} for p in self.points],
            columns=["subject_id", "cohort", "x", "y"],
        )


def behaviour_scores(sessions: Sequence[SessionRecord], behaviour: Behaviour) -> list[float]:
    values = [s.mmse if behaviour is Behaviour.MMSE else s.cdr for s in sessions]
    return [float(v) for v in values if v is not None]


def behaviour_association(
    series: Sequence[MarkerSeries],
    sessions_by_subject: Mapping[str, Sequence[SessionRecord]],
    behaviour: Behaviour,
    warn_callback: Callable[[str], None] | None = None,
) -> AssociationResult:
    """
    Correlate each subject's mean behaviour score with its mean adjacent-session marker change.

    Behaviour is averaged over the sessions where it was recorded, never
    differenced. Subjects with fewer than 2 sessions or no behaviour score are
    excluded with a warning.

    Raises:
        StatisticsError: If the correlation is undefined over the included subjects
    """
    warn = warn_callback or (lambda _: None)
    behaviour = Behaviour(behaviour)
    points, excluded = [], {}
    for s in series:
        if len(s) < 2:
            excluded[s.subject_id] = "fewer than 2 sessions"
        else:
            scores = behaviour_scores(sessions_by_subject.get(s.subject_id, []), behaviour)
            if scores:
                points.append(AssociationPoint(s.subject_id, s.cohort, float(np.mean(scores)), delta_long(s)))
                continue
            excluded[s.subject_id] = f"no {behaviour.value.upper()} score"
        warn(f"Warning: subject {s.subject_id} excluded from the association ({excluded[s.subject_id]})")

    result = pearson([p.x for p in points], [p.y for p in points])
    sign = -1.0 if behaviour is Behaviour.CDR else 1.0
    return AssociationResult(behaviour, points, result, sign * result.statistic, excluded)


def onset_severity_table(points: Sequence[AssociationPoint], series: Sequence[MarkerSeries]) -> pd.DataFrame:
    """
    Descriptive ceiling-effect view: onset marker and change per behaviour tertile.

    Tertiles are taken over the behaviour means of the association points.
    """
    first = {s.subject_id: float(s.markers[0]) for s in series}
    frame = pd.DataFrame(
        {
            "x": [p.x for p in points],
            "onset": [first.get(p.subject_id, np.nan) for p in points],
            "change": [p.y for p in points],
        }
    )
    if frame.empty:
        return pd.DataFrame(columns=["onset_mean", "change_mean", "subjects"])
    bins = min(3, frame["x"].nunique())
    frame["tertile"] = pd.qcut(frame["x"].rank(method="first"), q=bins, labels=False) + 1
    table = frame.groupby("tertile").agg(
        x_min=("x", "min"),
        x_max=("x", "max"),
        onset_mean=("onset", "mean"),
        change_mean=("change", "mean"),
        subjects=("x", "size"),
    )
    return table


def plot_association(result: AssociationResult, path: Path, kind: MarkerKind = MarkerKind.COMMUNICATION) -> Path:
    """Scatter of the association points coloured by cohort, with the least-squares line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for cohort in COHORT_ORDER:
        xs = [p.x for p in result.points if p.cohort is cohort]
        ys = [p.y for p in result.points if p.cohort is cohort]
        if xs:
            ax.scatter(xs, ys, label=str(cohort), color=COHORT_COLOURS[cohort], alpha=0.8)
    x = np.array([p.x for p in result.points])
    y = np.array([p.y for p in result.points])
    slope, intercept = np.polyfit(x, y, 1)
    grid = np.linspace(x.min(), x.max(), 50)
    ax.plot(grid, slope * grid + intercept, color="black", linewidth=1)
    ax.set_xlabel(f"mean {result.behaviour.value.upper()}")
    ax.set_ylabel(f"mean change in {kind} marker between sessions")
    ax.set_title(f"r = {result.result.statistic:.2f} (p = {result.result.p_value:.2g})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)
    return path
