"""Tests for statistical tests, cohort discrimination and behaviour association."""

import itertools

import numpy as np
import pytest

from disorder_markers.chat import SessionRecord
from disorder_markers.labels import Cohort
from disorder_markers.markers import MarkerKind, MarkerSeries
from disorder_markers.stats import (
    DISCRIMINATION_COLUMNS,
    Behaviour,
    StatisticsError,
    StatMethod,
    behaviour_association,
    cohort_discrimination,
    mann_whitney,
    onset_severity_table,
    pearson,
    plot_association,
)


def _exact_two_sided(a, b):
    """Two-sided p of U_a by enumerating every rank assignment."""
    n_a, n = len(a), len(a) + len(b)
    ranks = {v: i + 1 for i, v in enumerate(sorted([*a, *b]))}
    offset = n_a * (n_a + 1) / 2
    observed = sum(ranks[v] for v in a) - offset
    null = [sum(c) - offset for c in itertools.combinations(range(1, n + 1), n_a)]
    lower = sum(u <= observed for u in null) / len(null)
    upper = sum(u >= observed for u in null) / len(null)
    return observed, min(1.0, 2 * min(lower, upper))


def _series(subject_id, cohort, values, kind=MarkerKind.COMMUNICATION):
    return MarkerSeries(subject_id, cohort, kind, tuple(enumerate(values, start=1)))


def _sessions(subject_id, cohort, mmse_values, cdr_values=None):
    cdr_values = cdr_values or [None] * len(mmse_values)
    return [
        SessionRecord(subject_id, cohort, visit, mmse=mmse, cdr=cdr)
        for visit, (mmse, cdr) in enumerate(zip(mmse_values, cdr_values, strict=True), start=1)
    ]


class TestMannWhitney:
    """Tests for mann_whitney."""

    @pytest.mark.parametrize(
        "a,b",
        [
            ([1.0, 2.0, 3.0], [4.0, 5.0, 6.0, 7.0]),
            ([0.3, 0.9, 0.5, 0.1], [0.7, 0.2, 0.8]),
            ([5.0, 1.5, 9.0, 2.5, 7.5], [3.0, 8.0, 4.0, 6.0, 0.5, 10.0, 11.0]),
            ([0.61], [0.12, 0.55, 0.4, 0.9]),
        ],
    )
    def test_exact_matches_enumeration(self, a, b):
        expected_u, expected_p = _exact_two_sided(a, b)
        result = mann_whitney(a, b)
        assert result.method is StatMethod.MANN_WHITNEY_EXACT
        assert result.statistic == pytest.approx(expected_u)
        assert result.p_value == pytest.approx(expected_p)
        assert result.n == len(a) + len(b)

    @pytest.mark.parametrize("n_a,n_b", [(n_a, n_b) for n_a in range(1, 12) for n_b in range(1, 13 - n_a)])
    def test_exact_matches_every_rank_assignment(self, n_a, n_b):
        n = n_a + n_b
        offset = n_a * (n_a + 1) / 2
        assignments = list(itertools.combinations(range(1, n + 1), n_a))
        null = np.array([sum(ranks) - offset for ranks in assignments])
        for ranks in assignments:
            u = sum(ranks) - offset
            expected_p = min(1.0, 2 * min(np.mean(null <= u), np.mean(null >= u)))
            a = [float(r) for r in ranks]
            b = [float(r) for r in range(1, n + 1) if r not in ranks]
            result = mann_whitney(a, b)
            assert result.method is StatMethod.MANN_WHITNEY_EXACT
            assert result.statistic == pytest.approx(u)
            assert result.p_value == pytest.approx(expected_p)

    def test_ties_use_normal_approximation(self):
        result = mann_whitney([1.0, 2.0, 2.0], [2.0, 3.0, 4.0])
        assert result.method is StatMethod.MANN_WHITNEY_NORMAL
        assert 0.0 <= result.p_value <= 1.0

    def test_large_samples_use_normal_approximation(self):
        rng = np.random.default_rng(0)
        result = mann_whitney(rng.normal(size=20), rng.normal(1.0, size=20))
        assert result.method is StatMethod.MANN_WHITNEY_NORMAL

    def test_all_values_equal(self):
        result = mann_whitney([0.5, 0.5], [0.5, 0.5, 0.5])
        assert result.p_value == 1.0
        assert result.statistic == 3.0

    def test_empty_sample(self):
        with pytest.raises(StatisticsError):
            mann_whitney([], [1.0])


class TestPearson:
    """Tests for pearson."""

    def test_perfect_positive(self):
        result = pearson([1, 2, 3, 4], [2, 4, 6, 8])
        assert result.statistic == pytest.approx(1.0)
        assert result.p_value == pytest.approx(0.0, abs=1e-6)

    def test_perfect_negative(self):
        assert pearson([1, 2, 3], [3, 2, 1]).statistic == pytest.approx(-1.0)

    def test_bounds(self):
        rng = np.random.default_rng(1)
        result = pearson(rng.normal(size=30), rng.normal(size=30))
        assert -1.0 <= result.statistic <= 1.0
        assert 0.0 <= result.p_value <= 1.0
        assert result.method is StatMethod.PEARSON

    def test_too_few_points(self):
        with pytest.raises(StatisticsError):
            pearson([1, 2], [1, 2])

    def test_constant_variable(self):
        with pytest.raises(StatisticsError):
            pearson([1, 2, 3], [5, 5, 5])

    def test_length_mismatch(self):
        with pytest.raises(StatisticsError):
            pearson([1, 2, 3], [1, 2])


class TestCohortDiscrimination:
    """Tests for cohort_discrimination."""

    def test_pairs_and_quantities(self):
        series = [
            _series("001", Cohort.HEALTHY, [0.9, 0.85]),
            _series("002", Cohort.HEALTHY, [0.8, 0.82]),
            _series("003", Cohort.AD, [0.5, 0.4]),
            _series("004", Cohort.AD, [0.45]),
        ]
        frame = cohort_discrimination(series, MarkerKind.COMMUNICATION)
        assert list(frame.columns) == DISCRIMINATION_COLUMNS
        assert frame["cohorts"].unique().tolist() == ["healthy vs AD"]
        marker = frame[frame["quantity"] == "marker"].iloc[0]
        assert marker["n"] == 4
        change = frame[frame["quantity"] == "delta_end_start"].iloc[0]
        assert change["n"] == 3

    def test_no_pairs(self):
        frame = cohort_discrimination([_series("001", Cohort.HEALTHY, [0.9])], MarkerKind.COMMUNICATION)
        assert frame.empty
        assert list(frame.columns) == DISCRIMINATION_COLUMNS


class TestBehaviourAssociation:
    """Tests for behaviour_association."""

    SERIES = [
        _series("001", Cohort.HEALTHY, [0.9, 0.9, 0.9]),
        _series("002", Cohort.MCI, [0.8, 0.7, 0.6]),
        _series("003", Cohort.AD, [0.6, 0.4, 0.2]),
        _series("004", Cohort.AD, [0.5]),
        _series("005", Cohort.HEALTHY, [0.8, 0.8, 0.7]),
    ]
    SESSIONS = {
        "001": _sessions("001", Cohort.HEALTHY, [30, 30, 29], [0.0, 0.0, 0.0]),
        "002": _sessions("002", Cohort.MCI, [26, None, 24], [0.5, None, 0.5]),
        "003": _sessions("003", Cohort.AD, [20, 18, 16], [1.0, 1.0, 1.0]),
        "004": _sessions("004", Cohort.AD, [15], [1.0]),
        "005": _sessions("005", Cohort.HEALTHY, [None, None, None]),
    }

    def test_mmse_points_and_exclusions(self):
        messages = []
        result = behaviour_association(self.SERIES, self.SESSIONS, Behaviour.MMSE, messages.append)
        points = {p.subject_id: (p.x, p.y) for p in result.points}
        assert sorted(points) == ["001", "002", "003"]
        assert points["002"] == pytest.approx((25.0, -0.1))
        assert points["003"] == pytest.approx((18.0, -0.2))
        assert set(result.excluded) == {"004", "005"}
        assert len(messages) == 2
        assert result.result.statistic > 0
        assert result.sign_adjusted_r == result.result.statistic

    def test_cdr_sign_is_flipped(self):
        result = behaviour_association(self.SERIES, self.SESSIONS, Behaviour.CDR)
        assert result.sign_adjusted_r == pytest.approx(-result.result.statistic)
        assert result.result.statistic < 0
        assert result.sign_adjusted_r > 0

    def test_too_few_subjects(self):
        with pytest.raises(StatisticsError):
            behaviour_association(self.SERIES[:2], self.SESSIONS, Behaviour.MMSE)

    def test_point_table(self):
        result = behaviour_association(self.SERIES, self.SESSIONS, Behaviour.MMSE)
        table = result.point_table()
        assert list(table.columns) == ["subject_id", "cohort", "x", "y"]
        assert table["cohort"].tolist() == ["healthy", "MCI", "AD"]

    def test_onset_table(self):
        result = behaviour_association(self.SERIES, self.SESSIONS, Behaviour.MMSE)
        table = onset_severity_table(result.points, self.SERIES)
        assert table["subjects"].sum() == 3
        assert table["onset_mean"].tolist() == pytest.approx([0.6, 0.8, 0.9])

    def test_plot(self, tmp_path):
        result = behaviour_association(self.SERIES, self.SESSIONS, Behaviour.MMSE)
        path = plot_association(result, tmp_path / "plots" / "communication_mmse.png")
        assert path.exists()
        assert path.stat().st_size > 0
