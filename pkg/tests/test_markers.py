"""Tests for session markers, series and cohort summaries."""

import math

import numpy as np
import pytest

from disorder_markers.corpus import load_corpus
from disorder_markers.evaluation import Predictor
from disorder_markers.formulation import Strategy
from disorder_markers.labels import LABEL_ORDER, Cohort
from disorder_markers.markers import (
    DISORDER_KINDS,
    MODEL_KINDS,
    MarkerError,
    MarkerKind,
    MarkerRecord,
    MarkerSeries,
    build_series,
    cohort_summary,
    delta_end_start,
    delta_long,
    marker_from_probabilities,
    read_marker_records,
    score_sessions,
    session_marker,
    summary_table,
    write_marker_records,
)
from disorder_markers.stats import Behaviour, behaviour_association, cohort_discrimination
from disorder_markers.synthetic import FULL_LAYOUT, SMALL_LAYOUT, generate_corpus


class OraclePredictor:
    """Puts all probability on each utterance's gold label."""

    def __init__(self, sessions):
        self.gold = {u.text: u.label for s in sessions for u in s.included_utterances}

    def probabilities(self, texts):
        return np.array([[1.0 if label is self.gold[t] else 0.0 for label in LABEL_ORDER] for t in texts])


def _series(values, kind=MarkerKind.COMMUNICATION, subject_id="001", cohort=Cohort.HEALTHY):
    return MarkerSeries(subject_id, cohort, kind, tuple(enumerate(values, start=1)))


class TestMarkerFromProbabilities:
    """Tests for marker_from_probabilities."""

    PROBS = np.array([[0.7, 0.1, 0.1, 0.1], [0.3, 0.5, 0.0, 0.2]])

    def test_communication_is_mean_fluent_probability(self):
        assert marker_from_probabilities(self.PROBS, MarkerKind.COMMUNICATION) == pytest.approx(0.5)

    def test_disorders_in_percent(self):
        assert marker_from_probabilities(self.PROBS, MarkerKind.ANOMIA) == pytest.approx(30.0)
        assert marker_from_probabilities(self.PROBS, MarkerKind.AGRAMMATISM) == pytest.approx(15.0)

    def test_markers_sum_to_one(self):
        communication = marker_from_probabilities(self.PROBS, MarkerKind.COMMUNICATION)
        disorders = sum(marker_from_probabilities(self.PROBS, k) for k in DISORDER_KINDS)
        assert communication + disorders / 100 == pytest.approx(1.0)

    def test_no_utterances(self):
        with pytest.raises(MarkerError):
            marker_from_probabilities(np.zeros((0, 4)), MarkerKind.COMMUNICATION)

    def test_baseline_kind_rejected(self):
        with pytest.raises(MarkerError):
            marker_from_probabilities(self.PROBS, MarkerKind.INCOHERENCE)


class TestScoreSessions:
    """Tests for scoring sessions with a predictor."""

    def test_closure_with_a_model(self, five_session_corpus, tiny_backend, formulator):
        sessions = load_corpus(five_session_corpus).sessions[:2]
        predictor = Predictor(Strategy.STANDARD_FINETUNE, tiny_backend, formulator)
        records = score_sessions(predictor, sessions)
        assert len(records) == 2 * len(MODEL_KINDS)
        for session in sessions:
            values = {
                r.kind: r.value
                for r in records
                if (r.subject_id, r.visit) == (session.subject_id, session.visit_index)
            }
            total = values[MarkerKind.COMMUNICATION] + sum(values[k] for k in DISORDER_KINDS) / 100
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_session_marker(self, five_session_corpus):
        session = load_corpus(five_session_corpus).sessions[0]
        oracle = OraclePredictor([session])
        fluent = sum(u.label is LABEL_ORDER[0] for u in session.included_utterances)
        value = session_marker(oracle, session, MarkerKind.COMMUNICATION)
        assert value == pytest.approx(fluent / len(session.included_utterances))

    def test_empty_session_is_skipped(self, five_session_corpus):
        sessions = load_corpus(five_session_corpus).sessions
        sessions[0].utterances = []
        messages = []
        records = score_sessions(OraclePredictor(sessions), sessions, echo=messages.append)
        assert len(records) == 4 * len(MODEL_KINDS)
        assert messages[0].startswith("Warning:")


class TestSeries:
    """Tests for per-subject series and deltas."""

    def test_build_series_orders_visits(self):
        records = [
            MarkerRecord("002", Cohort.AD, 2, MarkerKind.ANOMIA, 20.0),
            MarkerRecord("002", Cohort.AD, 1, MarkerKind.ANOMIA, 10.0),
            MarkerRecord("001", Cohort.HEALTHY, 1, MarkerKind.ANOMIA, 5.0),
            MarkerRecord("001", Cohort.HEALTHY, 1, MarkerKind.COMMUNICATION, 0.9),
        ]
        series = build_series(records, MarkerKind.ANOMIA)
        assert [s.subject_id for s in series] == ["001", "002"]
        assert series[1].values == ((1, 10.0), (2, 20.0))

    def test_unordered_visits(self):
        with pytest.raises(MarkerError):
            MarkerSeries("001", Cohort.HEALTHY, MarkerKind.COMMUNICATION, ((2, 0.5), (1, 0.6)))

    def test_value_outside_scale(self):
        with pytest.raises(MarkerError):
            _series([0.5, 1.5])
        with pytest.raises(MarkerError):
            _series([-1.0], kind=MarkerKind.ANOMIA)

    def test_incoherence_may_be_negative(self):
        assert len(_series([-0.4, 0.2], kind=MarkerKind.INCOHERENCE)) == 2

    def test_delta_end_start(self):
        assert delta_end_start(_series([0.9, 0.4, 0.7])) == pytest.approx(-0.2)

    @pytest.mark.parametrize("values", [[0.9, 0.4, 0.7], [0.1, 0.2], [0.8, 0.6, 0.65, 0.3, 0.5]])
    def test_delta_long_telescopes(self, values):
        expected = (values[-1] - values[0]) / (len(values) - 1)
        assert delta_long(_series(values)) == pytest.approx(expected)

    def test_delta_long_telescopes_on_random_series(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            values = rng.uniform(0.0, 1.0, size=int(rng.integers(2, 12))).tolist()
            expected = (values[-1] - values[0]) / (len(values) - 1)
            assert delta_long(_series(values)) == pytest.approx(expected, abs=1e-12)

    def test_single_session(self):
        with pytest.raises(MarkerError):
            delta_long(_series([0.5]))
        with pytest.raises(MarkerError):
            delta_end_start(_series([0.5]))


class TestCohortSummary:
    """Tests for per-cohort summaries."""

    def test_subject_means_then_cohort(self):
        series = [
            _series([0.8, 0.6], subject_id="001"),
            _series([0.4, 0.4, 0.4, 0.4], subject_id="002"),
            _series([0.2], subject_id="003", cohort=Cohort.AD),
        ]
        messages = []
        frame = cohort_summary(series, MarkerKind.COMMUNICATION, warn_callback=messages.append)
        assert list(frame.index) == ["healthy", "AD"]
        assert frame.loc["healthy", "marker_mean"] == pytest.approx(0.55)
        assert frame.loc["healthy", "marker_std"] == pytest.approx(0.15)
        assert frame.loc["healthy", "delta_end_start_mean"] == pytest.approx(-0.1)
        assert frame.loc["AD", "marker_std"] == 0.0
        assert math.isnan(frame.loc["AD", "delta_long_mean"])
        assert frame.loc["AD", "subjects"] == 1
        assert "MCI" in messages[0]

    def test_summary_table_blocks(self):
        series = {
            MarkerKind.COMMUNICATION: [_series([0.8, 0.6])],
            MarkerKind.ANOMIA: [_series([10.0, 30.0], kind=MarkerKind.ANOMIA)],
        }
        table = summary_table(series)
        assert table.loc["healthy", ("anomia", "delta_long_mean")] == pytest.approx(20.0)
        assert table.loc["healthy", ("communication", "marker_mean")] == pytest.approx(0.7)


class TestCohortReproduction:
    """Marker structure of the generated corpus under gold-label probabilities."""

    @pytest.fixture
    def summary(self):
        sessions = generate_corpus(SMALL_LAYOUT, seed=0)
        records = score_sessions(OraclePredictor(sessions), sessions)
        return cohort_summary(build_series(records, MarkerKind.COMMUNICATION), MarkerKind.COMMUNICATION)

    def test_communication_orders_cohorts(self, summary):
        means = summary["marker_mean"]
        assert means["healthy"] > means["MCI"] > means["AD"]

    def test_ad_communication_declines(self, summary):
        assert summary.loc["AD", "delta_end_start_mean"] < 0
        assert summary.loc["AD", "delta_long_mean"] < summary.loc["healthy", "delta_long_mean"]


class TestFullLayoutReproduction:
    """Cohort separation and MMSE association on the full generated corpus."""

    @pytest.fixture(scope="class")
    def scored(self):
        sessions = generate_corpus(FULL_LAYOUT, seed=0)
        records = score_sessions(OraclePredictor(sessions), sessions)
        return sessions, build_series(records, MarkerKind.COMMUNICATION)

    def test_communication_orders_cohorts(self, scored):
        _, series = scored
        means = cohort_summary(series, MarkerKind.COMMUNICATION)["marker_mean"]
        assert means["healthy"] > means["MCI"] > means["AD"]

    def test_healthy_and_ad_differ(self, scored):
        _, series = scored
        frame = cohort_discrimination(series, MarkerKind.COMMUNICATION)
        row = frame[(frame["cohorts"] == "healthy vs AD") & (frame["quantity"] == "marker")].iloc[0]
        assert row["p_value"] < 0.05

    def test_decline_follows_mmse(self, scored):
        sessions, series = scored
        by_subject = {}
        for session in sessions:
            by_subject.setdefault(session.subject_id, []).append(session)
        association = behaviour_association(series, by_subject, Behaviour.MMSE)
        assert association.result.statistic > 0.4
        assert association.sign_adjusted_r > 0.4


class TestRecordsFile:
    """Tests for the marker records table."""

    def test_write_and_read(self, tmp_path):
        records = [
            MarkerRecord("001", Cohort.HEALTHY, 1, MarkerKind.COMMUNICATION, 0.75),
            MarkerRecord("012", Cohort.AD, 3, MarkerKind.WORD_FLUENCY, 0.5),
        ]
        path = write_marker_records(records, tmp_path / "markers" / "records.tsv")
        assert read_marker_records(path) == records
