"""Loss specifications, the fine-tuning loop, per-strategy recipes and grid search."""

import itertools
import json
import math
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from pathlib import Path

import numpy as np
import torch
from torch import nn
from transformers import get_linear_schedule_with_warmup, set_seed

from .backend import IGNORE_INDEX, Backend, Batch, HeadOutputs, collate
from .formulation import DemonstrationPool, FormulationInput, Formulator, Head, Strategy
from .labels import DisorderLabel

LEARNING_RATES = (1e-5, 2e-5, 5e-5, 1e-4, 2e-4)
BATCH_SIZES = (16, 32, 64, 128)
OPTIMIZERS = ("adamw", "adam")

# Inverse of the minimum losses of separate classification / MLM fine-tuning
JOINT_WEIGHTS = (1 / 0.5139, 1 / 2.4149)

Example = tuple[str, DisorderLabel]


class ConfigError(Exception):
    """Raised for invalid training, grid or toolkit configuration."""

    pass


class TrainingDivergedError(Exception):
    """Raised when the training loss stops being finite."""

    pass


def _noop_echo(_: str) -> None:
    pass


@dataclass(frozen=True)
class GridSpace:
    """Hyper-parameter pools the grid search draws from."""

    learning_rates: tuple[float, ...] = LEARNING_RATES
    batch_sizes: tuple[int, ...] = BATCH_SIZES
    optimizers: tuple[str, ...] = OPTIMIZERS

    def __post_init__(self):
        if not (self.learning_rates and self.batch_sizes and self.optimizers):
            raise ConfigError("Every grid pool needs at least one value")
        unknown = set(self.optimizers) - set(OPTIMIZERS)
        if unknown:
            raise ConfigError(f"Unknown optimizer(s) in grid: {', '.join(sorted(unknown))}")

    def points(self) -> list[tuple[float, int, str]]:
        return list(itertools.product(self.learning_rates, self.batch_sizes, self.optimizers))


@dataclass
class TrainingConfig:
    """
    Fine-tuning hyper-parameters.

    Weight decay, gradient clipping and warmup are off unless set.
    """

    learning_rate: float = 2e-5
    batch_size: int = 16
    optimizer: str = "adamw"
    max_epochs: int = 50
    early_stop_patience: int = 4
    repeats: int = 3
    grid_budget: int = 20
    seed: int = 0
    weight_decay: float = 0.0
    max_grad_norm: float | None = None
    warmup_ratio: float = 0.0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {', '.join(OPTIMIZERS)}, got {self.optimizer!r}")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate and batch_size must be positive")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigError("max_epochs and early_stop_patience must be at least 1")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be at least 1, got {self.repeats}")
        if self.grid_budget < 0:
            raise ConfigError("grid_budget cannot be negative")
        if self.weight_decay < 0 or not 0 <= self.warmup_ratio < 1:
            raise ConfigError("weight_decay must be >= 0 and warmup_ratio in [0, 1)")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ConfigError("max_grad_norm must be positive when set")

    def in_pool(self, space: GridSpace) -> bool:
        return (
            self.learning_rate in space.learning_rates
            and self.batch_size in space.batch_sizes
            and self.optimizer in space.optimizers
        )

    def to_dict(self) -> dict:
        return asdict(self)


class LossKind(StrEnum):
    CROSS_ENTROPY_CLASS = "cross_entropy_class"
    CROSS_ENTROPY_MLM = "cross_entropy_mlm"
    JOINT_WEIGHTED = "joint_weighted"


@dataclass(frozen=True)
class LossSpec:
    """Training objective; `weights` apply to the joint kind only."""

    kind: LossKind
    weights: tuple[float, float] = JOINT_WEIGHTS

    def __post_init__(self):
        if any(w < 0 for w in self.weights):
            raise ConfigError(f"Loss weights must be non-negative, got {self.weights}")


def joint_loss(l_cls, l_mlm, weights: tuple[float, float] = JOINT_WEIGHTS):
    """
    Weighted sum w_cls * l_cls + w_mlm * l_mlm of the two objectives.

    Works on floats and on torch scalars.

    Raises:
        ConfigError: If a weight is negative
        ValueError: If a float loss is negative
    """
    w_cls, w_mlm = weights
    if w_cls < 0 or w_mlm < 0:
        raise ConfigError(f"Loss weights must be non-negative, got {weights}")
    for value in (l_cls, l_mlm):
        if isinstance(value, float | int) and value < 0:
            raise ValueError(f"Losses must be non-negative, got {value}")
    return w_cls * l_cls + w_mlm * l_mlm


def _class_loss(outputs: HeadOutputs, batch: Batch, head: Head) -> torch.Tensor:
    logits = outputs.pair_logits if head is Head.PAIR else outputs.sequence_logits
    return nn.functional.cross_entropy(logits, batch.class_targets, ignore_index=IGNORE_INDEX)


def _mlm_loss(outputs: HeadOutputs, batch: Batch) -> torch.Tensor:
    logits = outputs.mlm_logits
    return nn.functional.cross_entropy(
        logits.reshape(-1, logits.size(-1)),
        batch.mlm_labels.reshape(-1),
        ignore_index=IGNORE_INDEX,
    )


def compute_loss(outputs: HeadOutputs, batch: Batch, loss: LossSpec, head: Head) -> torch.Tensor:
    if loss.kind is LossKind.CROSS_ENTROPY_CLASS:
        return _class_loss(outputs, batch, head)
    if loss.kind is LossKind.CROSS_ENTROPY_MLM:
        return _mlm_loss(outputs, batch)
    return joint_loss(_class_loss(outputs, batch, head), _mlm_loss(outputs, batch), loss.weights)


def batch_loss(model: nn.Module, batch: Batch, loss: LossSpec, head: Head) -> torch.Tensor:
    """
    Loss of one batch.

    For the joint kind with MLM-masked inputs, the class term scores the
    unmasked tokens and the MLM term the masked copy.
    """
    outputs = model(batch.input_ids, batch.attention_mask)
    if loss.kind is LossKind.JOINT_WEIGHTED and batch.original_ids is not None:
        clean = model(batch.original_ids, batch.attention_mask)
        return joint_loss(_class_loss(clean, batch, head), _mlm_loss(outputs, batch), loss.weights)
    return compute_loss(outputs, batch, loss, head)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float
    best: bool


@dataclass
class TrainingResult:
    """History of one fine_tune call; the backend holds the best checkpoint."""

    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_validation_loss: float = math.inf
    stopped_early: bool = False

    def write_history(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            for record in self.history:
                f.write(json.dumps(asdict(record)) + "\n")
        return path

    def extend(self, other: "TrainingResult") -> "TrainingResult":
        """Chain another stage's history after this one."""
        offset = len(self.history)
        shifted = [replace(r, epoch=r.epoch + offset) for r in other.history]
        return TrainingResult(
            history=[*self.history, *shifted],
            best_epoch=other.best_epoch + offset,
            best_validation_loss=other.best_validation_loss,
            stopped_early=other.stopped_early,
        )


def _make_optimizer(model: nn.Module, cfg: TrainingConfig) -> torch.optim.Optimizer:
    optimizer_cls = torch.optim.AdamW if cfg.optimizer == "adamw" else torch.optim.Adam
    return optimizer_cls(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def _validation_loss(backend: Backend, data: Sequence[FormulationInput], loss: LossSpec, batch_size: int) -> float:
    model = backend.model
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start : start + batch_size]
            batch = collate(chunk, backend.tokenizer.pad_token_id).to(backend.device)
            total += batch_loss(model, batch, loss, chunk[0].head).item() * len(chunk)
    return total / len(data)


def fine_tune(
    backend: Backend,
    train_data: Sequence[FormulationInput] | Callable[[int], Sequence[FormulationInput]],
    validation_data: Sequence[FormulationInput],
    loss: LossSpec,
    cfg: TrainingConfig,
    echo: Callable[[str], None] | None = None,
) -> TrainingResult:
    """
    Fine-tune `backend.model` in place and restore its best checkpoint.

    Args:
        backend: Backend to train
        train_data: Training inputs, or a function of the epoch number returning
            them (re-encodes dynamic masks every epoch)
        validation_data: Fixed validation inputs
        loss: Objective
        cfg: Hyper-parameters
        echo: Optional status callback

    Returns:
        Per-epoch history; the model holds the weights of the epoch with the
        minimum validation loss

    Raises:
        TrainingDivergedError: If the loss becomes NaN or infinite
        ValueError: If either dataset is empty
    """
    echo = echo or _noop_echo
    epoch_data = train_data if callable(train_data) else (lambda _epoch: train_data)
    if not validation_data:
        raise ValueError("Validation data is empty")

    set_seed(cfg.seed)
    model = backend.model
    pad_id = backend.tokenizer.pad_token_id
    optimizer = _make_optimizer(model, cfg)
    scheduler = None
    rng = np.random.default_rng(cfg.seed)
    result = TrainingResult()
    best_state = None
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        data = list(epoch_data(epoch))
        if not data:
            raise ValueError("Training data is empty")
        if scheduler is None and cfg.warmup_ratio > 0:
            total_steps = cfg.max_epochs * math.ceil(len(data) / cfg.batch_size)
            scheduler = get_linear_schedule_with_warmup(
                optimizer, int(total_steps * cfg.warmup_ratio), total_steps
            )

        model.train()
        order = rng.permutation(len(data))
        running = 0.0
        for start in range(0, len(data), cfg.batch_size):
            chunk = [data[i] for i in order[start : start + cfg.batch_size]]
            batch = collate(chunk, pad_id).to(backend.device)
            value = batch_loss(model, batch, loss, chunk[0].head)
            if not torch.isfinite(value):
                raise TrainingDivergedError(
                    f"Loss became {value.item()} at epoch {epoch} "
                    f"(learning rate {cfg.learning_rate}, batch size {cfg.batch_size}, "
                    f"optimizer {cfg.optimizer})"
                )
            optimizer.zero_grad()
            value.backward()
            if cfg.max_grad_norm is not None:
                nn.utils.clip_grad_norm_(model.parameters(), cfg.max_grad_norm)
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            running += value.item() * len(chunk)

        validation_loss = _validation_loss(backend, validation_data, loss, cfg.batch_size)
        if not math.isfinite(validation_loss):
            raise TrainingDivergedError(f"Validation loss became {validation_loss} at epoch {epoch}")
        improved = validation_loss < result.best_validation_loss
        result.history.append(EpochRecord(epoch, running / len(data), validation_loss, improved))
        echo(f"  epoch {epoch}: train {running / len(data):.4f}, validation {validation_loss:.4f}")

        if improved:
            result.best_epoch = epoch
            result.best_validation_loss = validation_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                result.stopped_early = True
                echo(f"  early stop after epoch {epoch} (best epoch {result.best_epoch})")
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


def strategy_inputs(
    strategy: Strategy,
    formulator: Formulator,
    examples: Sequence[Example],
    rng: np.random.Generator,
    pool: DemonstrationPool | None = None,
    mlm_only: bool = False,
) -> list[FormulationInput]:
    """
    Training inputs of one strategy; called again per epoch for fresh masks.

    Args:
        strategy: Formulation
        formulator: Encoder bound to the backend tokenizer
        examples: (utterance, gold label) pairs
        rng: Stream for MLM and inverse-prompt masks
        pool: Demonstration pool with fixed per-utterance draws, required for prompt_demonstrations
        mlm_only: For multitask_mlm_separate, build the MLM stage inputs
    """
    inputs: list[FormulationInput] = []
    for text, gold in examples:
        match strategy:
            case Strategy.STANDARD_FINETUNE:
                inputs.append(formulator.encode_standard(text, gold))
            case Strategy.MULTITASK_MLM_SEPARATE if mlm_only:
                masked = formulator.mask_for_mlm(formulator.encode_standard(text), rng)
                inputs.append(masked)
            case Strategy.MULTITASK_MLM_SEPARATE:
                inputs.append(formulator.encode_standard(text, gold))
            case Strategy.MULTITASK_MLM_JOINT:
                inputs.append(formulator.mask_for_mlm(formulator.encode_standard(text, gold), rng))
            case Strategy.ENTAILMENT:
                inputs.extend(formulator.build_entailment_pairs(text, gold))
            case Strategy.STANDARD_PROMPT:
                inputs.append(formulator.build_prompt(text, gold))
            case Strategy.PROMPT_DEMONSTRATIONS:
                if pool is None:
                    raise ConfigError("prompt_demonstrations needs a demonstration pool")
                inputs.append(formulator.build_demonstration_input(text, pool.for_utterance(text), gold))
            case Strategy.PROMPT_INVERSE:
                inputs.append(formulator.build_inverse_input(text, gold, rng))
            case _:
                raise ConfigError(f"Strategy {strategy} has no trainable model")
    return inputs


STRATEGY_LOSSES: dict[Strategy, LossKind] = {
    Strategy.STANDARD_FINETUNE: LossKind.CROSS_ENTROPY_CLASS,
    Strategy.MULTITASK_MLM_SEPARATE: LossKind.CROSS_ENTROPY_CLASS,
    Strategy.MULTITASK_MLM_JOINT: LossKind.JOINT_WEIGHTED,
    Strategy.ENTAILMENT: LossKind.CROSS_ENTROPY_CLASS,
    Strategy.STANDARD_PROMPT: LossKind.CROSS_ENTROPY_MLM,
    Strategy.PROMPT_DEMONSTRATIONS: LossKind.CROSS_ENTROPY_MLM,
    Strategy.PROMPT_INVERSE: LossKind.CROSS_ENTROPY_MLM,
}


def train_strategy(
    strategy: Strategy,
    backend: Backend,
    formulator: Formulator,
    train: Sequence[Example],
    validation: Sequence[Example],
    cfg: TrainingConfig,
    weights: tuple[float, float] = JOINT_WEIGHTS,
    echo: Callable[[str], None] | None = None,
) -> TrainingResult:
    """
    Fine-tune `backend` under one strategy's recipe and tag it with the strategy.

    multitask_mlm_separate runs an MLM stage, then resumes from that model
    with the classification objective.
    """
    echo = echo or _noop_echo
    if not strategy.trainable:
        raise ConfigError(f"Strategy {strategy} has no trainable model")
    pool = DemonstrationPool(train) if strategy is Strategy.PROMPT_DEMONSTRATIONS else None

    def builder(mlm_only: bool = False) -> Callable[[int], list[FormulationInput]]:
        return lambda epoch: strategy_inputs(
            strategy, formulator, train, np.random.default_rng([cfg.seed, epoch]), pool, mlm_only
        )

    def validation_inputs(mlm_only: bool = False) -> list[FormulationInput]:
        rng = np.random.default_rng([cfg.seed, 0])
        return strategy_inputs(strategy, formulator, validation, rng, pool, mlm_only)

    result = TrainingResult()
    if strategy is Strategy.MULTITASK_MLM_SEPARATE:
        echo("Stage 1: masked language modelling")
        result = fine_tune(
            backend, builder(True), validation_inputs(True),
            LossSpec(LossKind.CROSS_ENTROPY_MLM), cfg, echo=echo,
        )
        echo("Stage 2: classification")

    stage = fine_tune(
        backend, builder(), validation_inputs(),
        LossSpec(STRATEGY_LOSSES[strategy], weights), cfg, echo=echo,
    )
    backend.strategy = str(strategy)
    return result.extend(stage) if result.history else stage


def sample_grid(space: GridSpace, budget: int, seed: int) -> list[tuple[float, int, str]]:
    """`budget` seeded draws without replacement from the grid (all points if smaller)."""
    points = space.points()
    if budget >= len(points):
        return points
    rng = np.random.default_rng(seed)
    return [points[i] for i in rng.choice(len(points), size=budget, replace=False)]


@dataclass
class GridTrial:
    learning_rate: float
    batch_size: int
    optimizer: str
    validation_loss: float


@dataclass
class GridResult:
    best: TrainingConfig
    trials: list[GridTrial]


def grid_search(
    strategy: Strategy,
    make_backend: Callable[[], Backend],
    make_formulator: Callable[[Backend], Formulator],
    train: Sequence[Example],
    validation: Sequence[Example],
    cfg: TrainingConfig,
    space: GridSpace | None = None,
    weights: tuple[float, float] = JOINT_WEIGHTS,
    echo: Callable[[str], None] | None = None,
) -> GridResult:
    """
    Train once per sampled grid point on a fresh backend; keep the minimum validation loss.

    Returns:
        The winning TrainingConfig (other fields copied from `cfg`) and all trials
    """
    echo = echo or _noop_echo
    space = space or GridSpace()
    trials = []
    best_cfg, best_loss = None, math.inf
    draws = sample_grid(space, cfg.grid_budget, cfg.seed)
    for i, (lr, bs, opt) in enumerate(draws, start=1):
        trial_cfg = replace(cfg, learning_rate=lr, batch_size=bs, optimizer=opt)
        if not trial_cfg.in_pool(space):
            raise ConfigError(f"Grid point {(lr, bs, opt)} is outside the configured pools")
        echo(f"Grid trial {i}/{len(draws)}: lr={lr}, batch_size={bs}, optimizer={opt}")
        backend = make_backend()
        result = train_strategy(strategy, backend, make_formulator(backend), train, validation, trial_cfg, weights)
        trials.append(GridTrial(lr, bs, opt, result.best_validation_loss))
        if result.best_validation_loss < best_loss:
            best_cfg, best_loss = trial_cfg, result.best_validation_loss
    if best_cfg is None:
        raise ConfigError("Grid search needs a budget of at least 1")
    return GridResult(best=best_cfg, trials=trials)
