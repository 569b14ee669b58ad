"""Tests for the incoherence and word-fluency comparison markers."""

import numpy as np
import pytest

from disorder_markers.baselines import (
    HashingEmbeddingScorer,
    RepetitionFluencyScorer,
    baseline_records,
    incoherence_from_embeddings,
    incoherence_marker,
    make_embedding_scorer,
    make_fluency_scorer,
    word_fluency_from_scores,
    word_fluency_marker,
)
from disorder_markers.chat import SessionRecord, annotate
from disorder_markers.corpus import load_corpus
from disorder_markers.labels import Cohort, Speaker
from disorder_markers.markers import MarkerError, MarkerKind


class TestIncoherence:
    """Tests for adjacent-utterance similarity."""

    def test_mean_adjacent_cosine(self):
        embeddings = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]])
        assert incoherence_from_embeddings(embeddings) == pytest.approx(0.5)

    def test_opposite_directions(self):
        assert incoherence_from_embeddings(np.array([[1.0, 1.0], [-1.0, -1.0]])) == pytest.approx(-1.0)

    def test_single_row(self):
        with pytest.raises(MarkerError):
            incoherence_from_embeddings(np.array([[1.0, 0.0]]))

    def test_zero_norm(self):
        with pytest.raises(MarkerError):
            incoherence_from_embeddings(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_repeated_utterance_is_fully_coherent(self):
        session = SessionRecord(
            "001",
            Cohort.HEALTHY,
            1,
            [annotate("the boy is taking a cookie .", Speaker.PARTICIPANT)] * 3,
        )
        assert incoherence_marker(session, HashingEmbeddingScorer()) == pytest.approx(1.0)


class TestHashingEmbeddingScorer:
    """Tests for the offline embedding scorer."""

    def test_deterministic(self):
        a = HashingEmbeddingScorer(dim=16, seed=3).embed(["the boy", "the girl"])
        b = HashingEmbeddingScorer(dim=16, seed=3).embed(["the boy", "the girl"])
        assert a.shape == (2, 16)
        assert np.array_equal(a, b)

    def test_bag_of_words(self):
        scorer = HashingEmbeddingScorer(dim=8)
        a, b = scorer.embed(["boy the", "the boy"])
        assert np.allclose(a, b)


class TestWordFluency:
    """Tests for the word-level fluency scorer and marker."""

    def test_repetition(self):
        assert RepetitionFluencyScorer().score("the the boy") == [0.0, 1.0, 1.0]

    def test_fragment(self):
        assert RepetitionFluencyScorer().score("sp spigot running") == [0.0, 1.0, 1.0]

    def test_filler(self):
        assert RepetitionFluencyScorer().score("um the boy") == [0.0, 1.0, 1.0]

    def test_fluent(self):
        assert RepetitionFluencyScorer().score("the mother is drying a plate") == [1.0] * 6

    def test_mean_of_utterance_means(self):
        assert word_fluency_from_scores([[1.0, 0.0], [], [1.0]]) == pytest.approx(0.75)

    def test_no_words(self):
        with pytest.raises(MarkerError):
            word_fluency_from_scores([[], []])

    def test_marker_on_session(self):
        session = SessionRecord(
            "001",
            Cohort.AD,
            1,
            [
                annotate("the [/] the boy is taking a cookie .", Speaker.PARTICIPANT),
                annotate("the mother is washing .", Speaker.PARTICIPANT),
            ],
        )
        expected = (6 / 7 + 1.0) / 2
        assert word_fluency_marker(session, RepetitionFluencyScorer()) == pytest.approx(expected)


class TestBaselineRecords:
    """Tests for baseline_records."""

    def test_two_records_per_session(self, five_session_corpus):
        sessions = load_corpus(five_session_corpus).sessions
        records = baseline_records(sessions, make_embedding_scorer(), make_fluency_scorer())
        assert len(records) == 2 * len(sessions)
        assert {r.kind for r in records} == {MarkerKind.INCOHERENCE, MarkerKind.WORD_FLUENCY}
        assert all(-1.0 <= r.value <= 1.0 for r in records)

    def test_short_session_skips_incoherence(self):
        session = SessionRecord("001", Cohort.HEALTHY, 1, [annotate("the boy .", Speaker.PARTICIPANT)])
        messages = []
        records = baseline_records([session], make_embedding_scorer(), make_fluency_scorer(), messages.append)
        assert [r.kind for r in records] == [MarkerKind.WORD_FLUENCY]
        assert "incoherence" in messages[0]
