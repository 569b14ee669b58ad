"""Tests for corpus loading, records, splits and longitudinal views."""

from collections import Counter

import pytest

from disorder_markers.chat import SessionRecord
from disorder_markers.corpus import (
    CorpusError,
    class_count_table,
    group_subjects,
    labelled,
    load_corpus,
    longitudinal_subset,
    read_records,
    read_split_manifest,
    records_from_sessions,
    sessions_from_records,
    stratified_split,
    write_records,
    write_split_manifest,
)
from disorder_markers.labels import LABEL_ORDER, Cohort, DisorderLabel


def _items(counts: dict[DisorderLabel, int]) -> list[tuple[str, DisorderLabel]]:
    return [(f"{label}-{i}", label) for label, n in counts.items() for i in range(n)]


class TestLoadCorpus:
    """Tests for load_corpus."""

    def test_loads_every_session(self, five_session_corpus):
        load = load_corpus(five_session_corpus)
        assert len(load.sessions) == 5
        assert load.empty == []
        assert load.failed == []
        assert sorted(s.session_id for s in load.sessions) == ["001-1", "001-2", "001-3", "002-1", "002-2"]

    def test_no_chat_files(self, tmp_path):
        with pytest.raises(CorpusError, match="No .cha files"):
            load_corpus(tmp_path)

    def test_interviewer_only_file_is_skipped(self, five_session_corpus, interviewer_only_document):
        (five_session_corpus / "099-0.cha").write_text(interviewer_only_document, encoding="utf-8")
        messages = []
        load = load_corpus(five_session_corpus, echo=messages.append)
        assert len(load.sessions) == 5
        assert [p.name for p in load.empty] == ["099-0.cha"]
        assert any("099-0.cha" in m and m.startswith("Warning:") for m in messages)

    def test_broken_file_is_reported(self, five_session_corpus):
        (five_session_corpus / "098-0.cha").write_text("@Begin\nnot a tier\n", encoding="utf-8")
        load = load_corpus(five_session_corpus)
        assert [p.name for p, _ in load.failed] == ["098-0.cha"]


class TestRecords:
    """Tests for normalized utterance records."""

    def test_one_record_per_participant_utterance(self, five_session_corpus):
        sessions = load_corpus(five_session_corpus).sessions
        records = records_from_sessions(sessions)
        # 10 labelled utterances and one excluded per session
        assert len(records) == 55
        assert sum(r.label is None for r in records) == 5
        assert len(labelled(records)) == 50

    def test_record_ids_are_unique(self, five_session_corpus):
        records = records_from_sessions(load_corpus(five_session_corpus).sessions)
        assert len({r.record_id for r in records}) == len(records)
        assert records[0].record_id == "001-1-000"

    def test_jsonl_file(self, five_session_corpus, tmp_path):
        records = records_from_sessions(load_corpus(five_session_corpus).sessions)
        path = write_records(records, tmp_path / "data" / "records.jsonl")
        assert read_records(path) == records

    def test_sessions_rebuilt_from_records(self, five_session_corpus):
        sessions = load_corpus(five_session_corpus).sessions
        rebuilt = sessions_from_records(records_from_sessions(sessions))
        by_id = {s.session_id: s for s in sessions}
        for session in rebuilt:
            original = by_id[session.session_id]
            assert session.cohort is original.cohort
            assert session.mmse == original.mmse
            assert [u.label for u in session.included_utterances] == [
                u.label for u in original.included_utterances
            ]


class TestStratifiedSplit:
    """Tests for stratified_split."""

    def test_class_proportions(self):
        corpus = _items({DisorderLabel.FLUENT: 100, DisorderLabel.ANOMIA: 20})
        split = stratified_split(corpus, seed=0)
        assert Counter(label for _, label in split.test) == {DisorderLabel.FLUENT: 10, DisorderLabel.ANOMIA: 2}
        assert Counter(label for _, label in split.validation) == {
            DisorderLabel.FLUENT: 10,
            DisorderLabel.ANOMIA: 2,
        }
        assert len(split.train) == 96

    def test_parts_partition_the_corpus(self):
        corpus = _items({label: 17 for label in LABEL_ORDER})
        split = stratified_split(corpus, seed=3)
        ids = [item for part in split.parts.values() for item, _ in part]
        assert sorted(ids) == sorted(item for item, _ in corpus)

    def test_small_class_goes_to_train(self):
        corpus = _items({DisorderLabel.FLUENT: 30, DisorderLabel.AGRAMMATISM: 2})
        messages = []
        split = stratified_split(corpus, seed=0, warn_callback=messages.append)
        assert sum(label is DisorderLabel.AGRAMMATISM for _, label in split.train) == 2
        assert len(messages) == 1
        assert "agrammatism" in messages[0]

    def test_same_seed_same_split(self):
        corpus = _items({label: 25 for label in LABEL_ORDER})
        assert stratified_split(corpus, seed=7).test == stratified_split(corpus, seed=7).test

    def test_invalid_ratios(self):
        with pytest.raises(CorpusError):
            stratified_split(_items({DisorderLabel.FLUENT: 10}), ratios=(0.5, 0.2, 0.2))

    def test_empty_corpus(self):
        with pytest.raises(CorpusError):
            stratified_split([])

    def test_manifest(self, five_session_corpus, tmp_path):
        records = records_from_sessions(load_corpus(five_session_corpus).sessions)
        split = stratified_split(labelled(records), seed=0)
        path = write_split_manifest(split, tmp_path / "split.json")
        restored = read_split_manifest(path, records)
        assert [r.record_id for r, _ in restored.test] == [r.record_id for r, _ in split.test]
        assert restored.seed == 0

    def test_manifest_with_unknown_record(self, five_session_corpus, tmp_path):
        records = records_from_sessions(load_corpus(five_session_corpus).sessions)
        path = write_split_manifest(stratified_split(labelled(records), seed=0), tmp_path / "split.json")
        with pytest.raises(CorpusError, match="unknown record"):
            read_split_manifest(path, records[:10])


class TestSubjects:
    """Tests for subject grouping and the longitudinal subset."""

    def test_group_subjects(self, five_session_corpus):
        subjects = group_subjects(load_corpus(five_session_corpus).sessions)
        assert [(s.subject_id, s.visits) for s in subjects] == [("001", [1, 2, 3]), ("002", [1, 2])]

    def test_non_contiguous_visits(self):
        sessions = [SessionRecord("001", Cohort.HEALTHY, 1), SessionRecord("001", Cohort.HEALTHY, 3)]
        with pytest.raises(CorpusError, match="non-contiguous"):
            group_subjects(sessions)

    def test_longitudinal_subset(self, five_session_corpus):
        subset = longitudinal_subset(load_corpus(five_session_corpus).sessions, min_sessions=3)
        assert [s.subject_id for s in subset[Cohort.HEALTHY]] == ["001"]
        assert subset[Cohort.AD] == []
        assert subset[Cohort.MCI] == []

    def test_min_sessions_below_two(self):
        with pytest.raises(CorpusError):
            longitudinal_subset([], min_sessions=1)

    def test_class_count_table(self, five_session_corpus):
        table = class_count_table(load_corpus(five_session_corpus).sessions).set_index("cohort")
        assert list(table.index) == ["healthy", "AD"]
        assert table.loc["healthy", "sessions"] == 3
        assert table.loc["AD", "subjects"] == 1
        labels = [str(label) for label in LABEL_ORDER]
        assert table.loc["healthy", labels].sum() == 30
        assert table.loc["AD", labels].sum() == 20
