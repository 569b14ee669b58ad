"""Test fixtures and configuration."""

from pathlib import Path

import pytest

from disorder_markers.backend import Backend
from disorder_markers.formulation import Formulator
from disorder_markers.labels import Cohort
from disorder_markers.synthetic import SynthLayout, synthetic_utterances, write_corpus

GOLDEN_UTTERANCE = "A mother is wiping a dish"

CHAT_DOCUMENT = """@UTF8
@Begin
@Languages:\teng
@Participants:\tPAR Participant, INV Investigator
@ID:\teng|Pitt|PAR|67;|female|ProbableAD||Participant|18|1|
@ID:\teng|Pitt|INV|||||Investigator|||
@Media:\t012-1, audio
*INV:\ttell me what you see .
*PAR:\tthe [/] the boy is taking a cookie .
%mor:\tdet|the n|boy
*PAR:\tand the thing over there is [+ cir] .
*PAR:\tthat's all I see [+ exc] .
*PAR:\tthe mother is washing
\tthe dishes .
@End
"""

INTERVIEWER_ONLY_DOCUMENT = """@UTF8
@Begin
@ID:\teng|Pitt|INV|||||Investigator|||
@Media:\t099-0, audio
*INV:\ttell me what you see .
@End
"""


@pytest.fixture
def chat_document() -> str:
    """A small CHAT document of one AD participant at their second visit."""
    return CHAT_DOCUMENT


@pytest.fixture
def interviewer_only_document() -> str:
    """A CHAT document without a participant tier."""
    return INTERVIEWER_ONLY_DOCUMENT


@pytest.fixture
def examples() -> list:
    """Ten cleaned (utterance, label) pairs per class."""
    return synthetic_utterances(per_class=10, seed=0)


@pytest.fixture
def tiny_backend(examples) -> Backend:
    """Untrained tiny backend whose vocabulary covers the examples."""
    return Backend.tiny([text for text, _ in examples] + [GOLDEN_UTTERANCE], seed=0)


@pytest.fixture
def formulator(tiny_backend) -> Formulator:
    return Formulator(tiny_backend.tokenizer, max_length=tiny_backend.max_length)


@pytest.fixture
def five_session_corpus(tmp_path: Path) -> Path:
    """
    Five CHAT files: one healthy subject with 3 visits, one AD subject with 2.
    """
    layout = SynthLayout(
        longitudinal=((Cohort.HEALTHY, 3, 1),),
        short=((Cohort.AD, 2, 1),),
        utterances_per_session=10,
        missing_behaviour_subjects=0,
    )
    corpus_dir = tmp_path / "corpus"
    write_corpus(corpus_dir, layout, seed=0)
    return corpus_dir
