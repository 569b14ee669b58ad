"""Strategy-specific encodings of utterances into masked-language-model inputs."""

import hashlib
import math
import re
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np

from .labels import LABEL_ORDER, DisorderLabel


class FormulationError(Exception):
    """Raised when an utterance cannot be encoded for a strategy."""

    pass


class VerbalizerError(Exception):
    """Raised when the label-to-word mapping is invalid for the backend vocabulary."""

    pass


class Strategy(StrEnum):
    """Classification formulation used to train and query a model."""

    STANDARD_FINETUNE = "standard_finetune"
    MULTITASK_MLM_SEPARATE = "multitask_mlm_separate"
    MULTITASK_MLM_JOINT = "multitask_mlm_joint"
    ENTAILMENT = "entailment"
    STANDARD_PROMPT = "standard_prompt"
    PROMPT_DEMONSTRATIONS = "prompt_demonstrations"
    PROMPT_INVERSE = "prompt_inverse"
    RANDOM_RATE = "random_rate"

    @property
    def trainable(self) -> bool:
        return self is not Strategy.RANDOM_RATE


class Head(StrEnum):
    """Output head an input is scored with."""

    SEQUENCE = "sequence"
    PAIR = "pair"
    MASK = "mask"


# Pair-head classes
ENTAILS = 0
NOT_ENTAILS = 1

MLM_RATE = 0.15
INVERSE_RATE = 0.5

# Template of the prompt strategies: "<u> . It is [MASK] ."
PROMPT_PREFIX = ". It is"
PROMPT_SUFFIX = "."

DEFAULT_VERBALIZER_WORDS: dict[DisorderLabel, str] = {
    DisorderLabel.FLUENT: "fluent",
    DisorderLabel.ANOMIA: "empty",
    DisorderLabel.DISFLUENCY: "repeated",
    DisorderLabel.AGRAMMATISM: "ungrammatical",
}

DEFAULT_DEFINITIONS: dict[DisorderLabel, str] = {
    DisorderLabel.ANOMIA: "Talking around words/empty speech/incomplete speech",
    DisorderLabel.DISFLUENCY: "Word repetition or revision",
    DisorderLabel.AGRAMMATISM: "Agrammatism or paragrammatism in speech",
    DisorderLabel.FLUENT: "Fluent speech",
}

# A lone terminal mark is dropped before templating; "..." is kept
_TERMINAL_RX = re.compile(r"(?<!\.)\s*[.?!]$")


@dataclass(frozen=True)
class FormulationInput:
    """
    One encoded model input.

    Attributes:
        tokens: Token ids including the backend's CLS/SEP/MASK ids
        head: Head that scores the input
        mask_positions: Indices of MASK tokens
        token_targets: (position, original token id) pairs for mask-filling losses
        class_target: Class index for the sequence or pair head
        candidate_label: Label an entailment pair or inverse input was built for
        utterance_span: [start, end) indices of the utterance's own tokens
        original_tokens: Tokens before MLM masking; empty for unmasked inputs
    """

    tokens: tuple[int, ...]
    head: Head
    mask_positions: tuple[int, ...] = ()
    token_targets: tuple[tuple[int, int], ...] = ()
    class_target: int | None = None
    candidate_label: DisorderLabel | None = None
    utterance_span: tuple[int, int] = (0, 0)
    original_tokens: tuple[int, ...] = ()

    @property
    def has_targets(self) -> bool:
        return bool(self.token_targets) or self.class_target is not None

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Verbalizer:
    """Injective mapping from labels to single vocabulary words."""

    words: dict[DisorderLabel, str] = field(default_factory=lambda: dict(DEFAULT_VERBALIZER_WORDS))

    def __post_init__(self):
        self.words = {DisorderLabel(k): v.strip() for k, v in self.words.items()}
        missing = [str(label) for label in LABEL_ORDER if label not in self.words]
        if missing:
            raise VerbalizerError(f"Verbalizer is missing words for: {', '.join(missing)}")
        lowered = [w.lower() for w in self.words.values()]
        if len(set(lowered)) != len(lowered):
            raise VerbalizerError(f"Verbalizer words must be distinct: {self.words}")
        self._by_word = {w.lower(): label for label, w in self.words.items()}

    def verbalize(self, label: DisorderLabel) -> str:
        return self.words[label]

    def unverbalize(self, word: str) -> DisorderLabel:
        try:
            return self._by_word[word.strip().lower()]
        except KeyError:
            raise VerbalizerError(f"{word!r} is not a verbalizer word") from None

    def token_ids(self, tokenizer) -> tuple[int, ...]:
        """
        Backend token id of every label word, in LABEL_ORDER.

        Raises:
            VerbalizerError: If a word is not exactly one backend token
        """
        ids = []
        for label in LABEL_ORDER:
            word = self.words[label]
            pieces = tokenizer.encode(" " + word, add_special_tokens=False)
            if len(pieces) != 1 or pieces[0] == tokenizer.unk_token_id:
                raise VerbalizerError(
                    f"Verbalizer word {word!r} for {label} is not a single token of the backend "
                    f"vocabulary (got {len(pieces)} piece(s))"
                )
            ids.append(pieces[0])
        return tuple(ids)


@dataclass
class LabelDefinitions:
    """Natural-language definition of every label, used as entailment hypotheses."""

    definitions: dict[DisorderLabel, str] = field(default_factory=lambda: dict(DEFAULT_DEFINITIONS))

    def __post_init__(self):
        self.definitions = {DisorderLabel(k): v.strip() for k, v in self.definitions.items()}
        if set(self.definitions) != set(LABEL_ORDER) or not all(self.definitions.values()):
            raise FormulationError("Label definitions must give a non-empty text for all 4 labels")

    def __getitem__(self, label: DisorderLabel) -> str:
        return self.definitions[label]


class DemonstrationPool:
    """
    Training examples indexed by label, for sampling one demonstration per class.

    `for_utterance` gives every query the same draw wherever it is encoded,
    so training and prediction condition on identical demonstrations.
    """

    def __init__(self, examples: Sequence[tuple[str, DisorderLabel]], seed: int = 0):
        self.seed = seed
        self.by_label: dict[DisorderLabel, list[str]] = {label: [] for label in LABEL_ORDER}
        for text, label in examples:
            self.by_label[label].append(text)

    def sample(
        self,
        rng: np.random.Generator,
        exclude: str | None = None,
    ) -> dict[DisorderLabel, str]:
        """
        Draw one example per class; `exclude` (the query) is avoided when possible.

        Raises:
            FormulationError: If a class has no training example
        """
        demos = {}
        for label in LABEL_ORDER:
            texts = self.by_label[label]
            if not texts:
                raise FormulationError(f"No training example of class {label} for demonstrations")
            i = int(rng.integers(len(texts)))
            if texts[i] == exclude and len(texts) > 1:
                i = (i + 1 + int(rng.integers(len(texts) - 1))) % len(texts)
            demos[label] = texts[i]
        return demos

    def for_utterance(self, text: str) -> dict[DisorderLabel, str]:
        """The fixed demonstrations of query `text`."""
        return self.sample(np.random.default_rng(utterance_seed(text, self.seed)), exclude=text)


def sample_demonstrations(
    pool: Sequence[tuple[str, DisorderLabel]],
    rng: np.random.Generator,
    exclude: str | None = None,
) -> dict[DisorderLabel, str]:
    """Draw one (text) demonstration per class from labelled training examples."""
    return DemonstrationPool(pool).sample(rng, exclude=exclude)


def utterance_seed(text: str, seed: int) -> int:
    """Stable per-utterance seed, independent of Python's hash randomisation."""
    digest = hashlib.sha256(f"{seed}\x00{text}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def mask_count(rate: float, n: int) -> int:
    """ceil(rate * n), immune to float noise such as 0.15 * 20 = 3.0000000000000004."""
    return math.ceil(round(rate * n, 9))


def _noop_warn(_: str) -> None:
    pass


class Formulator:
    """
    Encodes utterances for every strategy against one backend tokenizer.

    Args:
        tokenizer: Hugging Face tokenizer of the backend
        verbalizer: Label-to-word mapping, validated against the tokenizer
        definitions: Label definitions for entailment pairs
        max_length: Backend maximum sequence length
        warn_callback: Called when an input has to be truncated
    """

    def __init__(
        self,
        tokenizer,
        verbalizer: Verbalizer | None = None,
        definitions: LabelDefinitions | None = None,
        max_length: int = 512,
        warn_callback: Callable[[str], None] | None = None,
    ):
        self.tokenizer = tokenizer
        self.verbalizer = verbalizer or Verbalizer()
        self.definitions = definitions or LabelDefinitions()
        self.max_length = max_length
        self.warn = warn_callback or _noop_warn

        self.cls_id = tokenizer.cls_token_id
        self.sep_id = tokenizer.sep_token_id
        self.mask_id = tokenizer.mask_token_id
        self.label_token_ids = self.verbalizer.token_ids(tokenizer)
        self._prefix_ids = self.tokenize(PROMPT_PREFIX)
        self._suffix_ids = self.tokenize(PROMPT_SUFFIX)

    def tokenize(self, text: str) -> list[int]:
        return self.tokenizer.encode(" " + text.strip(), add_special_tokens=False)

    def _utterance_ids(self, u: str, template: bool = False) -> list[int]:
        text = u.strip()
        if template:
            text = _TERMINAL_RX.sub("", text)
        ids = self.tokenize(text) if text else []
        if not ids:
            raise FormulationError("Cannot encode an empty utterance")
        return ids

    def _fit(self, ids: list[int], budget: int) -> list[int]:
        if len(ids) > budget:
            self.warn(f"Warning: utterance truncated from {len(ids)} to {budget} tokens")
            return ids[: max(budget, 1)]
        return ids

    def _template(self, u_ids: list[int], slot: int) -> list[int]:
        return [*u_ids, *self._prefix_ids, slot, *self._suffix_ids]

    def encode_standard(self, u: str, gold: DisorderLabel | None = None) -> FormulationInput:
        """[CLS] t1 ... tn [SEP] with the gold class index as target."""
        ids = self._fit(self._utterance_ids(u), self.max_length - 2)
        return FormulationInput(
            tokens=(self.cls_id, *ids, self.sep_id),
            head=Head.SEQUENCE,
            class_target=None if gold is None else gold.index,
            utterance_span=(1, 1 + len(ids)),
        )

    def _mask_span(
        self,
        inp: FormulationInput,
        rate: float,
        rng: np.random.Generator,
    ) -> FormulationInput:
        start, end = inp.utterance_span
        candidates = [i for i in range(start, end) if inp.tokens[i] != self.mask_id]
        if not candidates:
            raise FormulationError("Input has no maskable tokens")
        chosen = sorted(int(i) for i in rng.choice(candidates, size=mask_count(rate, len(candidates)), replace=False))
        tokens = list(inp.tokens)
        targets = []
        for i in chosen:
            targets.append((i, tokens[i]))
            tokens[i] = self.mask_id
        return replace(
            inp,
            tokens=tuple(tokens),
            mask_positions=tuple(sorted({*inp.mask_positions, *chosen})),
            token_targets=tuple(targets),
        )

    def mask_for_mlm(
        self,
        inp: FormulationInput,
        rng: np.random.Generator,
        rate: float = MLM_RATE,
    ) -> FormulationInput:
        """
        Mask ceil(rate * n) utterance tokens for the MLM objective.

        The class target and the unmasked tokens are kept, so the joint loss
        can classify the clean input and fill the masks of the copy.
        Calling again with a fresh rng state gives new positions.
        """
        if not 0 < rate < 1:
            raise FormulationError(f"Mask rate must be in (0, 1), got {rate}")
        return replace(self._mask_span(inp, rate, rng), original_tokens=inp.tokens)

    def build_entailment_pairs(
        self,
        u: str,
        gold: DisorderLabel | None = None,
    ) -> list[FormulationInput]:
        """One [CLS] u [SEP] p_j [SEP] input per label, in LABEL_ORDER."""
        u_ids = self._utterance_ids(u)
        pairs = []
        for label in LABEL_ORDER:
            hyp_ids = self.tokenize(self.definitions[label])
            ids = self._fit(u_ids, self.max_length - 3 - len(hyp_ids))
            target = None if gold is None else (ENTAILS if label is gold else NOT_ENTAILS)
            pairs.append(
                FormulationInput(
                    tokens=(self.cls_id, *ids, self.sep_id, *hyp_ids, self.sep_id),
                    head=Head.PAIR,
                    class_target=target,
                    candidate_label=label,
                    utterance_span=(1, 1 + len(ids)),
                )
            )
        return pairs

    def build_prompt(self, u: str, gold: DisorderLabel | None = None) -> FormulationInput:
        """[CLS] u . It is [MASK] . [SEP] with the gold label word as mask target."""
        budget = self.max_length - 2 - len(self._prefix_ids) - 1 - len(self._suffix_ids)
        u_ids = self._fit(self._utterance_ids(u, template=True), budget)
        tokens = [self.cls_id, *self._template(u_ids, self.mask_id), self.sep_id]
        mask_position = 1 + len(u_ids) + len(self._prefix_ids)
        targets = () if gold is None else ((mask_position, self.label_token_ids[gold.index]),)
        return FormulationInput(
            tokens=tuple(tokens),
            head=Head.MASK,
            mask_positions=(mask_position,),
            token_targets=targets,
            utterance_span=(1, 1 + len(u_ids)),
        )

    def build_demonstration_input(
        self,
        u: str,
        demos: Mapping[DisorderLabel, str],
        gold: DisorderLabel | None = None,
    ) -> FormulationInput:
        """
        Query prompt followed by one filled-in prompt per class.

        Demonstrations follow LABEL_ORDER; when the sequence is too long,
        trailing demonstrations are dropped before the query is truncated.

        Raises:
            FormulationError: If a class has no demonstration
        """
        missing = [str(label) for label in LABEL_ORDER if label not in demos]
        if missing:
            raise FormulationError(f"Missing demonstrations for: {', '.join(missing)}")

        query = self.build_prompt(u, gold)
        sequence = list(query.tokens)
        dropped = 0
        for label in LABEL_ORDER:
            demo_ids = self._utterance_ids(demos[label], template=True)
            block = [*self._template(demo_ids, self.label_token_ids[label.index]), self.sep_id]
            if len(sequence) + len(block) > self.max_length:
                dropped = len(LABEL_ORDER) - label.index
                break
            sequence.extend(block)
        if dropped:
            self.warn(f"Warning: dropped {dropped} trailing demonstration(s) to fit {self.max_length} tokens")
        return replace(query, tokens=tuple(sequence))

    def build_inverse_input(
        self,
        u: str,
        candidate: DisorderLabel,
        rng: np.random.Generator,
        rate: float = INVERSE_RATE,
    ) -> FormulationInput:
        """
        Prompt with the label slot filled by `candidate` and half the utterance masked.

        Positions depend only on the utterance length and `rng`, so a fresh
        generator from the same seed masks the same positions for every candidate.
        """
        prompt = self.build_prompt(u)
        position = prompt.mask_positions[0]
        tokens = list(prompt.tokens)
        tokens[position] = self.label_token_ids[candidate.index]
        filled = replace(prompt, tokens=tuple(tokens), mask_positions=(), candidate_label=candidate)
        return self._mask_span(filled, rate, rng)
