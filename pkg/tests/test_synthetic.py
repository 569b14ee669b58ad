"""Tests for the synthetic corpus generator."""

import numpy as np
import pytest

from disorder_markers.chat import annotate, parse_chat_file
from disorder_markers.labels import LABEL_ORDER, Cohort, DisorderLabel, Speaker
from disorder_markers.synthetic import (
    MIN_FLUENT,
    SMALL_LAYOUT,
    class_quota,
    fluent_share,
    generate_corpus,
    mmse_to_cdr,
    raw_utterance,
    synthetic_utterances,
    write_corpus,
)


class TestQuotas:
    """Tests for per-session class quotas."""

    def test_quota_sums_to_total(self):
        quota = class_quota(0.5, (0.3, 0.4, 0.3), 13)
        assert sum(quota.values()) == 13
        assert quota[DisorderLabel.FLUENT] == 6

    def test_all_fluent(self):
        quota = class_quota(1.0, (0.3, 0.4, 0.3), 10)
        assert quota == {DisorderLabel.FLUENT: 10, DisorderLabel.ANOMIA: 0, DisorderLabel.DISFLUENCY: 0,
                         DisorderLabel.AGRAMMATISM: 0}

    def test_healthy_share_is_stable_at_full_mmse(self):
        assert fluent_share(Cohort.HEALTHY, 30, 5) == fluent_share(Cohort.HEALTHY, 30, 1)

    def test_ad_share_declines_with_visits(self):
        assert fluent_share(Cohort.AD, 15, 3) < fluent_share(Cohort.AD, 15, 1)

    def test_share_floor(self):
        assert fluent_share(Cohort.AD, 0, 50) == MIN_FLUENT

    @pytest.mark.parametrize("mmse,cdr", [(30, 0.0), (27, 0.0), (24, 0.5), (18, 1.0), (12, 2.0), (5, 3.0)])
    def test_mmse_to_cdr(self, mmse, cdr):
        assert mmse_to_cdr(mmse) == cdr


class TestUtterances:
    """Tests for generated utterances."""

    @pytest.mark.parametrize("label", LABEL_ORDER)
    def test_codes_derive_the_label(self, label):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert annotate(raw_utterance(label, rng), Speaker.PARTICIPANT).label is label

    def test_examples_in_label_order(self):
        examples = synthetic_utterances(per_class=3, seed=1)
        assert [label for _, label in examples] == [label for label in LABEL_ORDER for _ in range(3)]
        assert all("[" not in text for text, _ in examples)


class TestGenerateCorpus:
    """Tests for generate_corpus and write_corpus."""

    def test_small_layout_shape(self):
        sessions = generate_corpus(SMALL_LAYOUT, seed=0)
        assert len({s.subject_id for s in sessions}) == 15
        assert len(sessions) == 45
        assert all(len(s.included_utterances) == 12 for s in sessions)

    def test_same_seed_same_corpus(self):
        first = generate_corpus(SMALL_LAYOUT, seed=2)
        second = generate_corpus(SMALL_LAYOUT, seed=2)
        assert [u.raw for s in first for u in s.utterances] == [u.raw for s in second for u in s.utterances]

    def test_one_healthy_subject_without_behaviour(self):
        sessions = generate_corpus(SMALL_LAYOUT, seed=0)
        first = [s for s in sessions if s.subject_id == "001"]
        assert all(s.mmse is None and s.cdr is None for s in first)

    def test_mmse_stays_in_cohort_ranges(self):
        sessions = generate_corpus(SMALL_LAYOUT, seed=0)
        healthy = [s.mmse for s in sessions if s.cohort is Cohort.HEALTHY and s.mmse is not None]
        assert min(healthy) >= 27

    def test_written_files_parse(self, tmp_path):
        messages = []
        paths = write_corpus(tmp_path / "corpus", SMALL_LAYOUT, seed=0, echo=messages.append)
        assert len(paths) == 45
        assert paths[0].name == "001-0.cha"
        with paths[0].open(encoding="utf-8") as f:
            session = parse_chat_file(f, source_name=paths[0].stem)
        assert (session.subject_id, session.visit_index) == ("001", 1)
        assert messages == [f"Wrote 45 sessions of 15 subjects to {tmp_path / 'corpus'}"]
