"""Masked-language-model backend: encoder, output heads and inference primitives."""

import json
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from tokenizers import Tokenizer, models, normalizers, pre_tokenizers, trainers
from torch import nn
from transformers import (
    AutoModelForMaskedLM,
    AutoTokenizer,
    BertConfig,
    BertForMaskedLM,
    PreTrainedTokenizerFast,
    set_seed,
)

from .formulation import (
    DEFAULT_DEFINITIONS,
    DEFAULT_VERBALIZER_WORDS,
    PROMPT_PREFIX,
    PROMPT_SUFFIX,
    FormulationInput,
)
from .labels import NUM_LABELS

DEFAULT_PRETRAINED = "roberta-base"

TINY_SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
TINY_MAX_LENGTH = 256

# Label index for positions without a target
IGNORE_INDEX = -100

_HEADS_FILE = "heads.pt"
_META_FILE = "backend.json"


class SequenceTooLongError(Exception):
    """Raised when an input exceeds the backend's maximum sequence length."""

    pass


class NotAMaskError(Exception):
    """Raised when mask-filling is requested at a position that holds no [MASK] token."""

    pass


@dataclass
class HeadOutputs:
    """Logits of the three heads for one batch."""

    mlm_logits: torch.Tensor
    sequence_logits: torch.Tensor
    pair_logits: torch.Tensor


class DisorderModel(nn.Module):
    """
    Masked LM encoder with a 4-way sequence head and a 2-way pair head.

    Both heads read the final-layer hidden state of the first ([CLS]) token,
    so all three heads share the encoder parameters.
    """

    def __init__(self, encoder: nn.Module):
        super().__init__()
        self.encoder = encoder
        hidden = encoder.config.hidden_size
        self.dropout = nn.Dropout(getattr(encoder.config, "hidden_dropout_prob", 0.1))
        self.sequence_head = nn.Linear(hidden, NUM_LABELS)
        self.pair_head = nn.Linear(hidden, 2)

    @property
    def config(self):
        return self.encoder.config

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> HeadOutputs:
        out = self.encoder(
            input_ids=input_ids,
            attention_mask=attention_mask,
            output_hidden_states=True,
        )
        cls = self.dropout(out.hidden_states[-1][:, 0])
        return HeadOutputs(
            mlm_logits=out.logits,
            sequence_logits=self.sequence_head(cls),
            pair_logits=self.pair_head(cls),
        )


@dataclass
class Batch:
    """
    Padded tensors for a list of FormulationInputs.

    `original_ids` holds the unmasked tokens when every input was MLM-masked.
    """

    input_ids: torch.Tensor
    attention_mask: torch.Tensor
    class_targets: torch.Tensor
    mlm_labels: torch.Tensor
    original_ids: torch.Tensor | None = None

    def to(self, device) -> "Batch":
        return Batch(
            input_ids=self.input_ids.to(device),
            attention_mask=self.attention_mask.to(device),
            class_targets=self.class_targets.to(device),
            mlm_labels=self.mlm_labels.to(device),
            original_ids=None if self.original_ids is None else self.original_ids.to(device),
        )


def collate(inputs: Sequence[FormulationInput], pad_id: int) -> Batch:
    """Right-pad inputs into a Batch; missing targets become IGNORE_INDEX."""
    width = max(len(inp) for inp in inputs)
    input_ids = torch.full((len(inputs), width), pad_id, dtype=torch.long)
    attention_mask = torch.zeros((len(inputs), width), dtype=torch.long)
    mlm_labels = torch.full((len(inputs), width), IGNORE_INDEX, dtype=torch.long)
    class_targets = torch.full((len(inputs),), IGNORE_INDEX, dtype=torch.long)
    for row, inp in enumerate(inputs):
        input_ids[row, : len(inp)] = torch.tensor(inp.tokens, dtype=torch.long)
        attention_mask[row, : len(inp)] = 1
        for position, token_id in inp.token_targets:
            mlm_labels[row, position] = token_id
        if inp.class_target is not None:
            class_targets[row] = inp.class_target
    original_ids = None
    if all(inp.original_tokens for inp in inputs):
        original_ids = torch.full((len(inputs), width), pad_id, dtype=torch.long)
        for row, inp in enumerate(inputs):
            original_ids[row, : len(inp.original_tokens)] = torch.tensor(inp.original_tokens, dtype=torch.long)
    return Batch(input_ids, attention_mask, class_targets, mlm_labels, original_ids)


def tiny_vocabulary_texts() -> list[str]:
    """Template, verbalizer and definition words the tiny tokenizer always knows."""
    return [
        PROMPT_PREFIX,
        PROMPT_SUFFIX,
        " ".join(DEFAULT_VERBALIZER_WORDS.values()),
        *DEFAULT_DEFINITIONS.values(),
    ]


def build_tiny_tokenizer(texts: Iterable[str], max_length: int = TINY_MAX_LENGTH) -> PreTrainedTokenizerFast:
    """Lower-cased word-level tokenizer over the words of `texts`."""
    tokenizer = Tokenizer(models.WordLevel(unk_token="[UNK]"))
    tokenizer.normalizer = normalizers.Lowercase()
    tokenizer.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    trainer = trainers.WordLevelTrainer(special_tokens=TINY_SPECIAL_TOKENS, min_frequency=1)
    tokenizer.train_from_iterator([*texts, *tiny_vocabulary_texts()], trainer=trainer)
    return PreTrainedTokenizerFast(
        tokenizer_object=tokenizer,
        unk_token="[UNK]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
        pad_token="[PAD]",
        model_max_length=max_length,
    )


class Backend:
    """
    A tokenizer plus DisorderModel pair, optionally tagged with its training strategy.

    Args:
        tokenizer: Hugging Face tokenizer exposing cls/sep/mask/pad token ids
        model: Encoder with heads
        name: Pre-trained model name, or "tiny"
        strategy: Strategy the model was fine-tuned under, None if untrained
    """

    def __init__(self, tokenizer, model: DisorderModel, name: str = "tiny", strategy: str | None = None):
        self.tokenizer = tokenizer
        self.model = model
        self.name = name
        self.strategy = strategy

    @classmethod
    def tiny(
        cls,
        texts: Iterable[str],
        seed: int = 0,
        hidden_size: int = 64,
        num_layers: int = 2,
        max_length: int = TINY_MAX_LENGTH,
    ) -> "Backend":
        """Randomly initialised 2-layer encoder over a vocabulary built from `texts`."""
        set_seed(seed)
        tokenizer = build_tiny_tokenizer(texts, max_length=max_length)
        config = BertConfig(
            vocab_size=len(tokenizer),
            hidden_size=hidden_size,
            num_hidden_layers=num_layers,
            num_attention_heads=2,
            intermediate_size=hidden_size * 2,
            max_position_embeddings=max_length,
            hidden_dropout_prob=0.0,
            attention_probs_dropout_prob=0.0,
            pad_token_id=tokenizer.pad_token_id,
        )
        return cls(tokenizer, DisorderModel(BertForMaskedLM(config)), name="tiny")

    @classmethod
    def pretrained(cls, name: str = DEFAULT_PRETRAINED, seed: int = 0) -> "Backend":
        """Load any Hugging Face masked LM; the heads are freshly initialised."""
        set_seed(seed)
        tokenizer = AutoTokenizer.from_pretrained(name)
        encoder = AutoModelForMaskedLM.from_pretrained(name)
        return cls(tokenizer, DisorderModel(encoder), name=name)

    @property
    def device(self) -> torch.device:
        return next(self.model.parameters()).device

    @property
    def max_length(self) -> int:
        limit = self.tokenizer.model_max_length
        if limit is None or limit > 100_000:
            limit = self.model.config.max_position_embeddings
        return int(limit)

    @property
    def vocab_size(self) -> int:
        return self.model.config.vocab_size

    def to(self, device: str | torch.device) -> "Backend":
        self.model.to(device)
        return self

    def save(self, directory: Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.encoder.save_pretrained(directory / "encoder")
        self.tokenizer.save_pretrained(directory / "tokenizer")
        torch.save(
            {
                "sequence_head": self.model.sequence_head.state_dict(),
                "pair_head": self.model.pair_head.state_dict(),
            },
            directory / _HEADS_FILE,
        )
        meta = {"name": self.name, "strategy": self.strategy}
        (directory / _META_FILE).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: Path) -> "Backend":
        directory = Path(directory)
        if not (directory / _META_FILE).exists():
            raise FileNotFoundError(f"No saved backend in {directory}")
        meta = json.loads((directory / _META_FILE).read_text(encoding="utf-8"))
        tokenizer = AutoTokenizer.from_pretrained(str(directory / "tokenizer"))
        model = DisorderModel(AutoModelForMaskedLM.from_pretrained(str(directory / "encoder")))
        heads = torch.load(directory / _HEADS_FILE, map_location="cpu")
        model.sequence_head.load_state_dict(heads["sequence_head"])
        model.pair_head.load_state_dict(heads["pair_head"])
        return cls(tokenizer, model, name=meta["name"], strategy=meta["strategy"])

    def check_length(self, inp: FormulationInput) -> None:
        if len(inp) > self.max_length:
            raise SequenceTooLongError(
                f"Input has {len(inp)} tokens, backend maximum is {self.max_length}; "
                "truncate it while encoding"
            )

    @torch.no_grad()
    def forward(self, inputs: Sequence[FormulationInput]) -> HeadOutputs:
        """Evaluation-mode forward pass over a batch of inputs."""
        for inp in inputs:
            self.check_length(inp)
        self.model.eval()
        batch = collate(inputs, self.tokenizer.pad_token_id).to(self.device)
        return self.model(batch.input_ids, batch.attention_mask)


def _batched(
    inputs: Sequence[FormulationInput],
    batch_size: int,
    fn: Callable[[Sequence[FormulationInput]], np.ndarray],
) -> np.ndarray:
    parts = [fn(inputs[i : i + batch_size]) for i in range(0, len(inputs), batch_size)]
    return np.concatenate(parts, axis=0)


def classify(backend: Backend, inp: FormulationInput) -> np.ndarray:
    """Softmax of the sequence head: a probability vector over the 4 labels."""
    return classify_batch(backend, [inp])[0]


def classify_batch(backend: Backend, inputs: Sequence[FormulationInput], batch_size: int = 32) -> np.ndarray:
    def run(chunk):
        logits = backend.forward(chunk).sequence_logits
        return torch.softmax(logits.double(), dim=-1).cpu().numpy()

    return _batched(inputs, batch_size, run)


def pair_classify(backend: Backend, inp: FormulationInput) -> np.ndarray:
    """Softmax of the pair head over (entails, not-entails) for a [CLS] u [SEP] p [SEP] input."""
    return pair_classify_batch(backend, [inp])[0]


def pair_classify_batch(backend: Backend, inputs: Sequence[FormulationInput], batch_size: int = 32) -> np.ndarray:
    def run(chunk):
        logits = backend.forward(chunk).pair_logits
        return torch.softmax(logits.double(), dim=-1).cpu().numpy()

    return _batched(inputs, batch_size, run)


def fill_mask(backend: Backend, inp: FormulationInput, positions: Sequence[int] | None = None) -> np.ndarray:
    """
    Vocabulary distribution at each requested mask position.

    Args:
        backend: Backend to query
        inp: Encoded input
        positions: Positions to read, defaults to inp.mask_positions

    Returns:
        Array of shape (len(positions), vocab_size), each row summing to 1

    Raises:
        NotAMaskError: If a position does not hold the [MASK] token
    """
    positions = list(inp.mask_positions if positions is None else positions)
    mask_id = backend.tokenizer.mask_token_id
    for position in positions:
        if not 0 <= position < len(inp) or inp.tokens[position] != mask_id:
            raise NotAMaskError(f"Position {position} is not a [MASK] token")
    logits = backend.forward([inp]).mlm_logits[0, positions]
    return torch.softmax(logits.double(), dim=-1).cpu().numpy()


def fill_mask_batch(
    backend: Backend,
    inputs: Sequence[FormulationInput],
    token_ids: Sequence[int],
    batch_size: int = 32,
) -> np.ndarray:
    """
    Probability of `token_ids` at the single mask position of each input.

    Returns:
        Array of shape (len(inputs), len(token_ids)) with unnormalised masses
    """
    mask_id = backend.tokenizer.mask_token_id
    ids = torch.tensor(list(token_ids), dtype=torch.long)

    def run(chunk):
        for inp in chunk:
            if len(inp.mask_positions) != 1 or inp.tokens[inp.mask_positions[0]] != mask_id:
                raise NotAMaskError("Prompt inputs must hold exactly one [MASK] token")
        logits = backend.forward(chunk).mlm_logits
        rows = torch.arange(len(chunk))
        cols = torch.tensor([inp.mask_positions[0] for inp in chunk])
        probs = torch.softmax(logits[rows, cols].double(), dim=-1)
        return probs[:, ids.to(probs.device)].cpu().numpy()

    return _batched(inputs, batch_size, run)


def masked_token_loss(backend: Backend, inputs: Sequence[FormulationInput], batch_size: int = 32) -> np.ndarray:
    """Mean cross-entropy over each input's token targets."""

    def run(chunk):
        outputs = backend.forward(chunk)
        labels = collate(chunk, backend.tokenizer.pad_token_id).mlm_labels.to(outputs.mlm_logits.device)
        per_token = nn.functional.cross_entropy(
            outputs.mlm_logits.double().transpose(1, 2),
            labels,
            ignore_index=IGNORE_INDEX,
            reduction="none",
        )
        counts = (labels != IGNORE_INDEX).sum(dim=1).clamp(min=1)
        return (per_token.sum(dim=1) / counts).cpu().numpy()

    return _batched(inputs, batch_size, run)
