"""
Synthetic picture-description corpus in CHAT format.

Cohorts differ in their share of disordered utterances (healthy < MCI < AD),
and every subject's share of fluent utterances declines across visits in
proportion to how far its baseline MMSE is below 30. Utterance counts per
class are set by quota, so the planted structure survives small layouts.
"""

from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chat import SessionRecord, annotate, format_chat
from .labels import Cohort, DisorderLabel, Speaker

_SUBJECTS = ("the boy", "the girl", "the mother", "the lady", "the kid", "the little boy")
_NOUNS = ("boy", "girl", "mother", "lady", "kid")
_ACTIONS = (
    "is taking a cookie",
    "is washing the dishes",
    "is standing on the stool",
    "is reaching for the jar",
    "is drying a plate",
    "is looking out the window",
    "is handing a cookie to his sister",
)
_PLACES = ("", " in the kitchen", " by the sink")

_ANOMIA = (
    "{subject} is getting the +...",
    "and the thing over there is [+ cir] .",
    "{subject} is doing + es .",
    "{subject} has the thingamajig [+ jar] .",
    "there is stuff and the +...",
)
_DISFLUENCY = (
    "the [/] {subject} {action} .",
    "&+sp {subject} {action} .",
    "{subject} is taking [//] {action} .",
    "{noun} {noun} [/] {action} .",
)
_AGRAMMATISM = (
    "{noun} fall off stool [+ gram] .",
    "her doing the dishes [+ gram] .",
    "{noun} wash dish [+ gram] .",
    "they is taking cookie [+ gram] .",
)
_EXCLUDED = ("I don't know what else [+ exc] .", "that's all I see [+ exc] .")
_INTERVIEWER = ("tell me everything you see going on in that picture .", "anything else ?")


@dataclass(frozen=True)
class CohortProfile:
    """
    Generation parameters of one cohort.

    Attributes:
        fluent: Share of fluent utterances at the first visit
        disorder_weights: Relative anomia, disfluency and agrammatism shares of the rest
        mmse_range: Inclusive range of baseline MMSE
        mmse_drop: MMSE points lost per visit
    """

    fluent: float
    disorder_weights: tuple[float, float, float]
    mmse_range: tuple[int, int]
    mmse_drop: int


PROFILES: dict[Cohort, CohortProfile] = {
    Cohort.HEALTHY: CohortProfile(0.82, (0.15, 0.55, 0.30), (27, 30), 0),
    Cohort.MCI: CohortProfile(0.66, (0.25, 0.45, 0.30), (22, 27), 1),
    Cohort.AD: CohortProfile(0.48, (0.30, 0.40, 0.30), (10, 22), 2),
}

# Fluent share lost per visit, per MMSE point below 30
DECLINE_PER_POINT = 0.006

MIN_FLUENT = 0.05


@dataclass(frozen=True)
class SynthLayout:
    """
    How many subjects of each cohort get how many sessions.

    Attributes:
        longitudinal: (cohort, sessions, subjects) groups with 3 or more sessions
        short: (cohort, sessions, subjects) groups with 1 or 2 sessions
        utterances_per_session: Labelled participant utterances per session
        missing_behaviour_subjects: Longitudinal healthy subjects without MMSE/CDR
    """

    longitudinal: tuple[tuple[Cohort, int, int], ...]
    short: tuple[tuple[Cohort, int, int], ...] = ()
    utterances_per_session: int = 20
    missing_behaviour_subjects: int = 1

    @property
    def groups(self) -> tuple[tuple[Cohort, int, int], ...]:
        return (*self.longitudinal, *self.short)


# Controls 28/10/8 and people with dementia 12/8/3 with 3/4/5 sessions
FULL_LAYOUT = SynthLayout(
    longitudinal=(
        (Cohort.HEALTHY, 3, 28),
        (Cohort.HEALTHY, 4, 10),
        (Cohort.HEALTHY, 5, 8),
        (Cohort.MCI, 3, 4),
        (Cohort.MCI, 4, 3),
        (Cohort.MCI, 5, 1),
        (Cohort.AD, 3, 8),
        (Cohort.AD, 4, 5),
        (Cohort.AD, 5, 2),
    ),
    short=(
        (Cohort.HEALTHY, 1, 6),
        (Cohort.HEALTHY, 2, 6),
        (Cohort.MCI, 1, 2),
        (Cohort.MCI, 2, 2),
        (Cohort.AD, 1, 6),
        (Cohort.AD, 2, 6),
    ),
)

SMALL_LAYOUT = SynthLayout(
    longitudinal=(
        (Cohort.HEALTHY, 3, 4),
        (Cohort.HEALTHY, 4, 2),
        (Cohort.MCI, 3, 3),
        (Cohort.AD, 3, 3),
        (Cohort.AD, 4, 1),
    ),
    short=((Cohort.HEALTHY, 1, 1), (Cohort.AD, 2, 1)),
    utterances_per_session=12,
)

LAYOUTS = {"full": FULL_LAYOUT, "small": SMALL_LAYOUT}


def mmse_to_cdr(mmse: int) -> float:
    """Coarse CDR consistent with an MMSE score."""
    if mmse >= 27:
        return 0.0
    if mmse >= 21:
        return 0.5
    if mmse >= 15:
        return 1.0
    if mmse >= 10:
        return 2.0
    return 3.0


def fluent_share(cohort: Cohort, baseline_mmse: int, visit: int) -> float:
    profile = PROFILES[cohort]
    share = profile.fluent - DECLINE_PER_POINT * (30 - baseline_mmse) * (visit - 1)
    return max(MIN_FLUENT, share)


def class_quota(share: float, weights: tuple[float, float, float], total: int) -> dict[DisorderLabel, int]:
    """Split `total` utterances: round(share * total) fluent, the rest by largest remainder."""
    fluent = int(round(share * total))
    rest = total - fluent
    exact = np.asarray(weights, dtype=float) / sum(weights) * rest
    counts = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - counts), kind="stable")[: rest - counts.sum()]:
        counts[i] += 1
    return {
        DisorderLabel.FLUENT: fluent,
        DisorderLabel.ANOMIA: int(counts[0]),
        DisorderLabel.DISFLUENCY: int(counts[1]),
        DisorderLabel.AGRAMMATISM: int(counts[2]),
    }


def _fill(template: str, rng: np.random.Generator) -> str:
    return template.format(
        subject=_SUBJECTS[rng.integers(len(_SUBJECTS))],
        noun=_NOUNS[rng.integers(len(_NOUNS))],
        action=_ACTIONS[rng.integers(len(_ACTIONS))],
    )


def raw_utterance(label: DisorderLabel, rng: np.random.Generator) -> str:
    """A raw CHAT participant line whose codes derive `label`."""
    if label is DisorderLabel.FLUENT:
        place = _PLACES[rng.integers(len(_PLACES))]
        return f"{_fill('{subject} {action}', rng)}{place} ."
    bank = {
        DisorderLabel.ANOMIA: _ANOMIA,
        DisorderLabel.DISFLUENCY: _DISFLUENCY,
        DisorderLabel.AGRAMMATISM: _AGRAMMATISM,
    }[label]
    return _fill(bank[rng.integers(len(bank))], rng)


def synthetic_utterances(per_class: int, seed: int = 0) -> list[tuple[str, DisorderLabel]]:
    """`per_class` cleaned (utterance, label) pairs of every class, in label order."""
    rng = np.random.default_rng(seed)
    examples = []
    for label in DisorderLabel:
        for _ in range(per_class):
            utt = annotate(raw_utterance(label, rng), Speaker.PARTICIPANT)
            examples.append((utt.text, utt.label))
    return examples


def _session(
    subject_id: str,
    cohort: Cohort,
    visit: int,
    baseline_mmse: int | None,
    layout: SynthLayout,
    rng: np.random.Generator,
) -> SessionRecord:
    mmse_for_rate = baseline_mmse if baseline_mmse is not None else PROFILES[cohort].mmse_range[1]
    quota = class_quota(
        fluent_share(cohort, mmse_for_rate, visit),
        PROFILES[cohort].disorder_weights,
        layout.utterances_per_session,
    )
    raws = [raw_utterance(label, rng) for label, n in quota.items() for _ in range(n)]
    raws = [raws[i] for i in rng.permutation(len(raws))]
    raws.insert(int(rng.integers(len(raws) + 1)), _EXCLUDED[rng.integers(len(_EXCLUDED))])

    utterances = [annotate(_INTERVIEWER[0], Speaker.INTERVIEWER)]
    utterances += [annotate(raw, Speaker.PARTICIPANT) for raw in raws]
    utterances.append(annotate(_INTERVIEWER[1], Speaker.INTERVIEWER))

    mmse = cdr = None
    if baseline_mmse is not None:
        mmse = int(np.clip(baseline_mmse - PROFILES[cohort].mmse_drop * (visit - 1), 0, 30))
        cdr = mmse_to_cdr(mmse)
        # Behaviour scores go missing at some second visits
        if visit == 2 and rng.random() < 0.2:
            mmse = cdr = None
    return SessionRecord(subject_id, cohort, visit, utterances, mmse=mmse, cdr=cdr)


def generate_corpus(layout: SynthLayout = FULL_LAYOUT, seed: int = 0) -> list[SessionRecord]:
    """Sessions of every subject in `layout`, subjects numbered from 001."""
    rng = np.random.default_rng(seed)
    sessions = []
    number = 0
    missing = layout.missing_behaviour_subjects
    for cohort, n_sessions, n_subjects in layout.groups:
        lo, hi = PROFILES[cohort].mmse_range
        for _ in range(n_subjects):
            number += 1
            baseline = int(rng.integers(lo, hi + 1))
            if missing and cohort is Cohort.HEALTHY and n_sessions >= 3:
                baseline, missing = None, missing - 1
            for visit in range(1, n_sessions + 1):
                sessions.append(_session(f"{number:03d}", cohort, visit, baseline, layout, rng))
    return sessions


def write_corpus(
    out_dir: Path,
    layout: SynthLayout = FULL_LAYOUT,
    seed: int = 0,
    echo: Callable[[str], None] | None = None,
) -> list[Path]:
    """Write one `{subject}-{visit - 1}.cha` file per session."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for session in generate_corpus(layout, seed):
        path = out_dir / f"{session.subject_id}-{session.visit_index - 1}.cha"
        path.write_text(format_chat(session), encoding="utf-8")
        paths.append(path)
    if echo:
        subjects = len({p.stem.rsplit("-", 1)[0] for p in paths})
        echo(f"Wrote {len(paths)} sessions of {subjects} subjects to {out_dir}")
    return paths
