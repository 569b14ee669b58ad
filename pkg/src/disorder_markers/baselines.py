"""Comparison markers: adjacent-utterance incoherence and word-level fluency."""

import re
from collections.abc import Callable, Iterable, Sequence
from typing import Protocol

import numpy as np

from .chat import SessionRecord
from .formulation import utterance_seed
from .markers import MarkerError, MarkerKind, MarkerRecord

TOY = "toy"
DEFAULT_SENTENCE_MODEL = "sentence-transformers/all-MiniLM-L6-v2"

FILLERS = frozenset({"uh", "um", "er", "erm", "hm", "mm", "ah"})

_WORD_RX = re.compile(r"[\w']+")


class EmbeddingScorer(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """One fixed-dimension vector per text."""
        ...


class WordFluencyScorer(Protocol):
    def score(self, text: str) -> list[float]:
        """Probability that each word of `text` is fluent."""
        ...


def words(text: str) -> list[str]:
    return _WORD_RX.findall(text.lower())


class HashingEmbeddingScorer:
    """Bag-of-words embedding with a seeded random vector per word."""

    def __init__(self, dim: int = 128, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _word_vector(self, word: str) -> np.ndarray:
        if word not in self._cache:
            rng = np.random.default_rng(utterance_seed(word, self.seed))
            self._cache[word] = rng.standard_normal(self.dim)
        return self._cache[word]

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            for word in words(text):
                out[i] += self._word_vector(word)
        return out


class RepetitionFluencyScorer:
    """
    Rule-based word fluency.

    A word is disfluent when the next word repeats it, when it is a fragment
    (a strict prefix of the next word, two letters or more), or when it is a filler.
    """

    def __init__(self, disfluent: float = 0.0, fluent: float = 1.0):
        self.disfluent = disfluent
        self.fluent = fluent

    def score(self, text: str) -> list[float]:
        tokens = words(text)
        scores = []
        for i, word in enumerate(tokens):
            following = tokens[i + 1] if i + 1 < len(tokens) else None
            repeated = following == word
            fragment = following is not None and len(word) >= 2 and following.startswith(word) and following != word
            bad = repeated or fragment or word in FILLERS
            scores.append(self.disfluent if bad else self.fluent)
        return scores


class SentenceTransformerScorer:
    """Sentence embeddings from a sentence-transformers model (optional extra)."""

    def __init__(self, model_name: str = DEFAULT_SENTENCE_MODEL):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError:
            raise ImportError(
                "sentence-transformers is not installed; install disorder-markers[embeddings]"
            ) from None
        self.model = SentenceTransformer(model_name)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(self.model.encode(list(texts), convert_to_numpy=True), dtype=float)


class TokenClassificationFluencyScorer:
    """
    Per-word fluent-tag probability from a token-classification model.

    Args:
        model_name: Hugging Face model tagging words as fluent or disfluent
        fluent_label: Name of the fluent tag in the model's label2id
    """

    def __init__(self, model_name: str, fluent_label: str = "O"):
        import torch
        from transformers import AutoModelForTokenClassification, AutoTokenizer

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForTokenClassification.from_pretrained(model_name).eval()
        label2id = self.model.config.label2id
        if fluent_label not in label2id:
            raise ValueError(f"{model_name} has no {fluent_label!r} tag (tags: {', '.join(label2id)})")
        self.fluent_index = label2id[fluent_label]

    def score(self, text: str) -> list[float]:
        tokens = words(text)
        if not tokens:
            return []
        encoded = self.tokenizer(tokens, is_split_into_words=True, truncation=True, return_tensors="pt")
        with self._torch.no_grad():
            probs = self._torch.softmax(self.model(**encoded).logits[0], dim=-1)
        scores: dict[int, float] = {}
        for position, word_id in enumerate(encoded.word_ids()):
            if word_id is not None and word_id not in scores:
                scores[word_id] = float(probs[position, self.fluent_index])
        return [scores[i] for i in sorted(scores)]


def make_embedding_scorer(name: str = TOY, seed: int = 0) -> EmbeddingScorer:
    return HashingEmbeddingScorer(seed=seed) if name == TOY else SentenceTransformerScorer(name)


def make_fluency_scorer(name: str = TOY) -> WordFluencyScorer:
    return RepetitionFluencyScorer() if name == TOY else TokenClassificationFluencyScorer(name)


def incoherence_from_embeddings(embeddings: np.ndarray) -> float:
    """
    Mean cosine similarity of adjacent rows.

    Raises:
        MarkerError: If there are fewer than 2 rows or a row has zero norm
    """
    embeddings = np.asarray(embeddings, dtype=float)
    if len(embeddings) < 2:
        raise MarkerError("Incoherence needs at least 2 utterances")
    norms = np.linalg.norm(embeddings, axis=1)
    if np.any(norms == 0):
        raise MarkerError("Cannot compare a zero-norm utterance embedding")
    unit = embeddings / norms[:, None]
    cosines = np.sum(unit[:-1] * unit[1:], axis=1)
    return float(np.clip(cosines.mean(), -1.0, 1.0))


def incoherence_marker(session: SessionRecord, scorer: EmbeddingScorer) -> float:
    """Session mean of adjacent-utterance cosine similarity; higher is more coherent."""
    texts = [u.text for u in session.included_utterances]
    if len(texts) < 2:
        raise MarkerError(f"Session {session.session_id} has fewer than 2 utterances")
    return incoherence_from_embeddings(scorer.embed(texts))


def word_fluency_from_scores(utterance_scores: Iterable[Sequence[float]]) -> float:
    """Mean over utterances of the mean word score; word-less utterances are skipped."""
    means = [float(np.mean(scores)) for scores in utterance_scores if len(scores)]
    if not means:
        raise MarkerError("Word fluency needs at least one utterance with a word")
    return float(np.mean(means))


def word_fluency_marker(session: SessionRecord, scorer: WordFluencyScorer) -> float:
    """Session mean of per-utterance word fluency; higher means fewer disfluent words."""
    return word_fluency_from_scores(scorer.score(u.text) for u in session.included_utterances)


def baseline_records(
    sessions: Iterable[SessionRecord],
    embedding_scorer: EmbeddingScorer,
    fluency_scorer: WordFluencyScorer,
    echo: Callable[[str], None] | None = None,
) -> list[MarkerRecord]:
    """Incoherence and word-fluency records in the model-marker schema."""
    echo = echo or (lambda _: None)
    records = []
    for session in sessions:
        for kind, fn, scorer in (
            (MarkerKind.INCOHERENCE, incoherence_marker, embedding_scorer),
            (MarkerKind.WORD_FLUENCY, word_fluency_marker, fluency_scorer),
        ):
            try:
                value = fn(session, scorer)
            except MarkerError as e:
                echo(f"Warning: no {kind} marker for session {session.session_id}: {e}")
                continue
            records.append(MarkerRecord(session.subject_id, session.cohort, session.visit_index, kind, value))
    return records
