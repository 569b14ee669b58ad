"""Tests for the strategy encoders."""

import numpy as np
import pytest

from disorder_markers.formulation import (
    ENTAILS,
    NOT_ENTAILS,
    DemonstrationPool,
    FormulationError,
    Formulator,
    Head,
    LabelDefinitions,
    Verbalizer,
    VerbalizerError,
    mask_count,
    sample_demonstrations,
    utterance_seed,
)
from disorder_markers.labels import LABEL_ORDER, DisorderLabel

UTTERANCE = "A mother is wiping a dish"
UTTERANCE_TOKENS = ["a", "mother", "is", "wiping", "a", "dish"]


def _tokens(formulator: Formulator, inp) -> list[str]:
    return formulator.tokenizer.convert_ids_to_tokens(list(inp.tokens))


class TestEncodeStandard:
    """Tests for the classification encoding."""

    def test_golden_tokens(self, formulator):
        inp = formulator.encode_standard(UTTERANCE, DisorderLabel.AGRAMMATISM)
        assert _tokens(formulator, inp) == ["[CLS]", *UTTERANCE_TOKENS, "[SEP]"]
        assert inp.head is Head.SEQUENCE
        assert inp.class_target == 3
        assert inp.utterance_span == (1, 7)

    def test_empty_utterance(self, formulator):
        with pytest.raises(FormulationError):
            formulator.encode_standard("   ")

    def test_truncation_warns(self, tiny_backend):
        messages = []
        formulator = Formulator(tiny_backend.tokenizer, max_length=5, warn_callback=messages.append)
        inp = formulator.encode_standard(UTTERANCE)
        assert len(inp) == 5
        assert messages and messages[0].startswith("Warning:")


class TestPrompt:
    """Tests for the cloze prompt."""

    def test_golden_tokens(self, formulator):
        inp = formulator.build_prompt(UTTERANCE, DisorderLabel.FLUENT)
        assert _tokens(formulator, inp) == [
            "[CLS]", *UTTERANCE_TOKENS, ".", "it", "is", "[MASK]", ".", "[SEP]",
        ]
        assert inp.mask_positions == (10,)
        fluent_id = formulator.tokenizer.convert_tokens_to_ids("fluent")
        assert inp.token_targets == ((10, fluent_id),)
        assert inp.head is Head.MASK

    def test_exactly_one_mask(self, formulator):
        inp = formulator.build_prompt(UTTERANCE)
        assert list(inp.tokens).count(formulator.mask_id) == 1
        assert inp.token_targets == ()

    def test_terminal_period_dropped(self, formulator):
        assert formulator.build_prompt(UTTERANCE + ".").tokens == formulator.build_prompt(UTTERANCE).tokens

    def test_trailing_off_kept(self, formulator):
        tokens = _tokens(formulator, formulator.build_prompt("the boy is getting the..."))
        # three from the ellipsis, two from the template
        assert tokens.count(".") == 5


class TestEntailment:
    """Tests for entailment pairs."""

    def test_four_pairs_in_label_order(self, formulator):
        pairs = formulator.build_entailment_pairs(UTTERANCE, DisorderLabel.ANOMIA)
        assert [p.candidate_label for p in pairs] == list(LABEL_ORDER)
        assert [p.class_target for p in pairs] == [NOT_ENTAILS, ENTAILS, NOT_ENTAILS, NOT_ENTAILS]
        assert all(p.head is Head.PAIR for p in pairs)

    def test_pair_layout(self, formulator):
        pair = formulator.build_entailment_pairs(UTTERANCE)[1]
        tokens = list(pair.tokens)
        hypothesis = formulator.tokenize(formulator.definitions[DisorderLabel.ANOMIA])
        assert tokens[0] == formulator.cls_id
        assert tokens[7] == formulator.sep_id
        assert tokens[8:-1] == hypothesis
        assert tokens[-1] == formulator.sep_id
        assert pair.class_target is None


class TestMasking:
    """Tests for MLM and inverse masking."""

    def test_mask_count(self):
        assert mask_count(0.15, 20) == 3
        assert mask_count(0.15, 6) == 1
        assert mask_count(0.5, 6) == 3
        assert mask_count(0.5, 7) == 4

    def test_mlm_masks_within_utterance(self, formulator):
        inp = formulator.encode_standard(UTTERANCE, DisorderLabel.FLUENT)
        masked = formulator.mask_for_mlm(inp, np.random.default_rng(0))
        assert len(masked.mask_positions) == 1
        position, original = masked.token_targets[0]
        assert 1 <= position < 7
        assert masked.tokens[position] == formulator.mask_id
        assert original == inp.tokens[position]
        assert masked.class_target == DisorderLabel.FLUENT.index
        assert masked.original_tokens == inp.tokens
        assert inp.original_tokens == ()

    def test_mlm_fresh_rng_state_changes_positions(self, formulator):
        inp = formulator.encode_standard("the boy is taking a cookie in the kitchen by the sink")
        rng = np.random.default_rng(1)
        draws = {formulator.mask_for_mlm(inp, rng).mask_positions for _ in range(20)}
        assert len(draws) > 1

    def test_inverse_masks_half_the_utterance(self, formulator):
        inp = formulator.build_inverse_input(UTTERANCE, DisorderLabel.ANOMIA, np.random.default_rng(0))
        assert len(inp.mask_positions) == 3
        assert all(1 <= p < 7 for p in inp.mask_positions)
        empty_id = formulator.tokenizer.convert_tokens_to_ids("empty")
        assert inp.tokens[10] == empty_id
        assert inp.candidate_label is DisorderLabel.ANOMIA

    def test_inverse_positions_shared_by_candidates(self, formulator):
        positions = {
            formulator.build_inverse_input(UTTERANCE, label, np.random.default_rng(5)).mask_positions
            for label in LABEL_ORDER
        }
        assert len(positions) == 1

    def test_invalid_rate(self, formulator):
        with pytest.raises(FormulationError):
            formulator.mask_for_mlm(formulator.encode_standard(UTTERANCE), np.random.default_rng(0), rate=1.5)


class TestDemonstrations:
    """Tests for demonstration sampling and concatenation."""

    DEMOS = {
        DisorderLabel.FLUENT: "the boy is taking a cookie",
        DisorderLabel.ANOMIA: "the boy is getting the...",
        DisorderLabel.DISFLUENCY: "the the boy is taking a cookie",
        DisorderLabel.AGRAMMATISM: "boy fall off stool",
    }

    def test_query_then_one_block_per_class(self, formulator):
        query = formulator.build_prompt(UTTERANCE)
        inp = formulator.build_demonstration_input(UTTERANCE, self.DEMOS)
        tokens = list(inp.tokens)
        assert tokens[: len(query)] == list(query.tokens)
        assert tokens.count(formulator.mask_id) == 1
        assert tokens.count(formulator.sep_id) == 5
        label_positions = [tokens.index(i) for i in formulator.label_token_ids]
        assert label_positions == sorted(label_positions)

    def test_trailing_demonstrations_dropped(self, tiny_backend):
        messages = []
        formulator = Formulator(tiny_backend.tokenizer, max_length=30, warn_callback=messages.append)
        demos = dict.fromkeys(LABEL_ORDER, "the boy is taking")
        inp = formulator.build_demonstration_input(UTTERANCE, demos)
        assert len(inp) <= 30
        assert "dropped 3" in messages[0]

    def test_missing_class(self, formulator):
        with pytest.raises(FormulationError, match="Missing demonstrations"):
            formulator.build_demonstration_input(UTTERANCE, {DisorderLabel.FLUENT: "the boy"})

    def test_query_never_its_own_demonstration(self):
        pool = [
            ("query", DisorderLabel.FLUENT),
            ("other", DisorderLabel.FLUENT),
            ("a", DisorderLabel.ANOMIA),
            ("b", DisorderLabel.DISFLUENCY),
            ("c", DisorderLabel.AGRAMMATISM),
        ]
        for seed in range(20):
            demos = sample_demonstrations(pool, np.random.default_rng(seed), exclude="query")
            assert demos[DisorderLabel.FLUENT] == "other"

    def test_empty_class_in_pool(self):
        pool = DemonstrationPool([("x", DisorderLabel.FLUENT)])
        with pytest.raises(FormulationError):
            pool.sample(np.random.default_rng(0))

    def test_fixed_draw_per_utterance(self):
        examples = [(f"{label} example {i}", label) for label in DisorderLabel for i in range(5)]
        query = "the boy is taking a cookie"
        pool = DemonstrationPool(examples)
        first = pool.for_utterance(query)
        assert pool.for_utterance(query) == first
        assert DemonstrationPool(examples).for_utterance(query) == first
        assert set(first) == set(DisorderLabel)

    def test_fixed_draw_avoids_the_query(self):
        pool = DemonstrationPool(
            [("query", DisorderLabel.FLUENT), ("other", DisorderLabel.FLUENT), ("a", DisorderLabel.ANOMIA),
             ("b", DisorderLabel.DISFLUENCY), ("c", DisorderLabel.AGRAMMATISM)]
        )
        assert pool.for_utterance("query")[DisorderLabel.FLUENT] == "other"

    def test_utterance_seed_is_stable(self):
        assert utterance_seed("the boy", 0) == utterance_seed("the boy", 0)
        assert utterance_seed("the boy", 0) != utterance_seed("the boy", 1)


class TestVerbalizer:
    """Tests for the label-to-word mapping."""

    def test_round_trip_words(self):
        verbalizer = Verbalizer()
        for label in LABEL_ORDER:
            assert verbalizer.unverbalize(verbalizer.verbalize(label)) is label
        assert verbalizer.unverbalize(" Fluent ") is DisorderLabel.FLUENT

    def test_words_must_be_distinct(self):
        words = dict.fromkeys(LABEL_ORDER, "same")
        with pytest.raises(VerbalizerError, match="distinct"):
            Verbalizer(words)

    def test_every_label_needs_a_word(self):
        with pytest.raises(VerbalizerError, match="missing"):
            Verbalizer({DisorderLabel.FLUENT: "fluent"})

    def test_multi_token_word_rejected(self, tiny_backend):
        words = {
            DisorderLabel.FLUENT: "fluent",
            DisorderLabel.ANOMIA: "empty speech",
            DisorderLabel.DISFLUENCY: "repeated",
            DisorderLabel.AGRAMMATISM: "ungrammatical",
        }
        with pytest.raises(VerbalizerError, match="single token"):
            Formulator(tiny_backend.tokenizer, verbalizer=Verbalizer(words))

    def test_unknown_word_rejected(self, tiny_backend):
        words = {**Verbalizer().words, DisorderLabel.FLUENT: "zyzzyva"}
        with pytest.raises(VerbalizerError):
            Formulator(tiny_backend.tokenizer, verbalizer=Verbalizer(words))

    def test_definitions_need_every_label(self):
        with pytest.raises(FormulationError):
            LabelDefinitions({DisorderLabel.FLUENT: "Fluent speech"})
