"""Label, cohort and speaker vocabularies shared across the toolkit."""

from enum import StrEnum


class DisorderLabel(StrEnum):
    """Utterance-level language-disorder class."""

    FLUENT = "fluent"
    ANOMIA = "anomia"
    DISFLUENCY = "disfluency"
    AGRAMMATISM = "agrammatism"

    @property
    def index(self) -> int:
        """Position of the label in LABEL_ORDER (the class index of every head)."""
        return LABEL_ORDER.index(self)

    @classmethod
    def from_index(cls, index: int) -> "DisorderLabel":
        return LABEL_ORDER[index]


# Fixed class order: model heads, probability vectors, confusion matrices
# and demonstration concatenation all follow it.
LABEL_ORDER: tuple[DisorderLabel, ...] = (
    DisorderLabel.FLUENT,
    DisorderLabel.ANOMIA,
    DisorderLabel.DISFLUENCY,
    DisorderLabel.AGRAMMATISM,
)

NUM_LABELS = len(LABEL_ORDER)

DISORDER_LABELS: tuple[DisorderLabel, ...] = LABEL_ORDER[1:]


class Cohort(StrEnum):
    """Clinical cohort of a subject."""

    HEALTHY = "healthy"
    MCI = "MCI"
    AD = "AD"


COHORT_ORDER: tuple[Cohort, ...] = (Cohort.HEALTHY, Cohort.MCI, Cohort.AD)


class Speaker(StrEnum):
    """Role of the speaker of a tier."""

    PARTICIPANT = "participant"
    INTERVIEWER = "interviewer"


def parse_label(value: str | None) -> DisorderLabel | None:
    """Parse a stored label; None and "excluded" both mean excluded."""
    if value is None or value == "excluded":
        return None
    return DisorderLabel(value)
