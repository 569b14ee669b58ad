"""Per-strategy prediction, per-class metrics, and repeated experiments."""

from collections import Counter
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import softmax
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from .backend import (
    Backend,
    classify_batch,
    fill_mask_batch,
    masked_token_loss,
    pair_classify_batch,
)
from .formulation import ENTAILS, DemonstrationPool, Formulator, Strategy, utterance_seed
from .labels import LABEL_ORDER, NUM_LABELS, DisorderLabel
from .training import JOINT_WEIGHTS, Example, TrainingConfig, TrainingResult, train_strategy


class StrategyMismatchError(Exception):
    """Raised when a model is queried under a strategy it was not trained for."""

    pass


class MetricsError(Exception):
    """Raised when metrics cannot be computed from the given predictions."""

    pass


def _noop_echo(_: str) -> None:
    pass


@dataclass(frozen=True)
class Prediction:
    utterance_id: str
    gold: DisorderLabel | None
    predicted: DisorderLabel
    class_probabilities: tuple[float, ...]


def prompt_probabilities(label_masses: np.ndarray) -> np.ndarray:
    """Renormalise mask-fill masses of the verbalizer tokens (one row per utterance)."""
    masses = np.asarray(label_masses, dtype=float)
    return masses / masses.sum(axis=-1, keepdims=True)


def entailment_probabilities(p_entails: np.ndarray) -> np.ndarray:
    """Renormalise the per-class p(entails) values into a class distribution."""
    values = np.asarray(p_entails, dtype=float)
    return values / values.sum(axis=-1, keepdims=True)


def inverse_probabilities(losses: np.ndarray) -> np.ndarray:
    """Softmin over candidate losses: lowest loss gets the highest probability."""
    return softmax(-np.asarray(losses, dtype=float), axis=-1)


class Predictor:
    """
    Class probabilities of utterances under one trained strategy.

    Args:
        strategy: Strategy the backend was trained under
        backend: Trained backend
        formulator: Encoder bound to the backend tokenizer
        pool: Training examples for demonstrations (prompt_demonstrations only)
        seed: Seed for per-utterance inverse masks
        batch_size: Inference batch size

    Raises:
        StrategyMismatchError: If the backend was trained under another strategy
    """

    def __init__(
        self,
        strategy: Strategy,
        backend: Backend,
        formulator: Formulator,
        pool: DemonstrationPool | None = None,
        seed: int = 0,
        batch_size: int = 32,
    ):
        if not strategy.trainable:
            raise StrategyMismatchError(f"{strategy} makes no per-utterance predictions")
        if backend.strategy is not None and backend.strategy != strategy:
            raise StrategyMismatchError(
                f"Backend was trained with {backend.strategy}, cannot predict with {strategy}"
            )
        if strategy is Strategy.PROMPT_DEMONSTRATIONS and pool is None:
            raise StrategyMismatchError("prompt_demonstrations needs the training pool for demonstrations")
        self.strategy = strategy
        self.backend = backend
        self.formulator = formulator
        self.pool = pool
        self.seed = seed
        self.batch_size = batch_size

    def _rng(self, text: str) -> np.random.Generator:
        return np.random.default_rng(utterance_seed(text, self.seed))

    def probabilities(self, texts: Sequence[str]) -> np.ndarray:
        """Array of shape (len(texts), 4) in LABEL_ORDER."""
        if not texts:
            return np.zeros((0, NUM_LABELS))
        f = self.formulator
        bs = self.batch_size
        match self.strategy:
            case Strategy.STANDARD_FINETUNE | Strategy.MULTITASK_MLM_SEPARATE | Strategy.MULTITASK_MLM_JOINT:
                return classify_batch(self.backend, [f.encode_standard(t) for t in texts], bs)
            case Strategy.ENTAILMENT:
                pairs = [p for t in texts for p in f.build_entailment_pairs(t)]
                p_entails = pair_classify_batch(self.backend, pairs, bs)[:, ENTAILS]
                return entailment_probabilities(p_entails.reshape(len(texts), NUM_LABELS))
            case Strategy.STANDARD_PROMPT:
                inputs = [f.build_prompt(t) for t in texts]
                return prompt_probabilities(fill_mask_batch(self.backend, inputs, f.label_token_ids, bs))
            case Strategy.PROMPT_DEMONSTRATIONS:
                inputs = [f.build_demonstration_input(t, self.pool.for_utterance(t)) for t in texts]
                return prompt_probabilities(fill_mask_batch(self.backend, inputs, f.label_token_ids, bs))
            case Strategy.PROMPT_INVERSE:
                inputs = [
                    f.build_inverse_input(t, label, self._rng(t))
                    for t in texts
                    for label in LABEL_ORDER
                ]
                losses = masked_token_loss(self.backend, inputs, bs)
                return inverse_probabilities(losses.reshape(len(texts), NUM_LABELS))
        raise StrategyMismatchError(f"No prediction rule for {self.strategy}")

    def predict(self, u: str, gold: DisorderLabel | None = None, utterance_id: str = "") -> Prediction:
        return self.predict_many([(utterance_id, u, gold)])[0]

    def predict_many(self, items: Sequence[tuple[str, str, DisorderLabel | None]]) -> list[Prediction]:
        """Predict (utterance_id, text, gold) triples."""
        probs = self.probabilities([text for _, text, _ in items])
        return [
            Prediction(
                utterance_id=uid,
                gold=gold,
                predicted=DisorderLabel.from_index(int(np.argmax(row))),
                class_probabilities=tuple(float(p) for p in row),
            )
            for (uid, _, gold), row in zip(items, probs, strict=True)
        ]


@dataclass
class ClassMetrics:
    """Accuracy (within-class recall) and F1, in percent; None when undefined."""

    accuracy: float | None
    f1: float | None
    support: int


@dataclass
class MetricsReport:
    per_class: dict[DisorderLabel, ClassMetrics]
    macro_accuracy: float | None
    macro_f1: float | None
    confusion: list[list[int]]
    undefined_classes: tuple[DisorderLabel, ...] = ()
    strategy: str | None = None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "per_class": {
                str(label): {"accuracy": m.accuracy, "f1": m.f1, "support": m.support}
                for label, m in self.per_class.items()
            },
            "macro_accuracy": self.macro_accuracy,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
            "undefined_classes": [str(c) for c in self.undefined_classes],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricsReport":
        return cls(
            per_class={
                DisorderLabel(k): ClassMetrics(v["accuracy"], v["f1"], v["support"])
                for k, v in data["per_class"].items()
            },
            macro_accuracy=data["macro_accuracy"],
            macro_f1=data["macro_f1"],
            confusion=data["confusion"],
            undefined_classes=tuple(DisorderLabel(c) for c in data.get("undefined_classes", [])),
            strategy=data.get("strategy"),
        )


def macro_average(values: Sequence[float | None]) -> float | None:
    """Unweighted mean of the defined values."""
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def evaluate(
    predictions: Sequence[Prediction],
    strategy: str | None = None,
    warn_callback: Callable[[str], None] | None = None,
) -> MetricsReport:
    """
    Per-class accuracy and F1 plus their macro means, in percent.

    Classes absent from the gold labels are undefined and left out of the macro means.

    Raises:
        MetricsError: If there are no predictions or one lacks a gold label
    """
    warn = warn_callback or _noop_echo
    if not predictions:
        raise MetricsError("No predictions to evaluate")
    if any(p.gold is None for p in predictions):
        raise MetricsError("Every prediction needs a gold label")

    y_true = [p.gold.index for p in predictions]
    y_pred = [p.predicted.index for p in predictions]
    labels = list(range(NUM_LABELS))
    cm = confusion_matrix(y_true, y_pred, labels=labels)
    _, recall, f1, support = precision_recall_fscore_support(y_true, y_pred, labels=labels, zero_division=0)
    per_class = {}
    undefined = []
    for label in LABEL_ORDER:
        i = label.index
        if support[i] == 0:
            undefined.append(label)
            per_class[label] = ClassMetrics(None, None, 0)
            continue
        per_class[label] = ClassMetrics(float(100 * recall[i]), float(100 * f1[i]), int(support[i]))
    if undefined:
        warn(
            "Warning: no gold examples of "
            + ", ".join(str(c) for c in undefined)
            + "; excluded from macro averages"
        )
    return MetricsReport(
        per_class=per_class,
        macro_accuracy=macro_average([m.accuracy for m in per_class.values()]),
        macro_f1=macro_average([m.f1 for m in per_class.values()]),
        confusion=cm.tolist(),
        undefined_classes=tuple(undefined),
        strategy=strategy,
    )


def class_frequencies(labels: Sequence[DisorderLabel]) -> dict[DisorderLabel, float]:
    counts = Counter(labels)
    total = sum(counts.values())
    if total == 0:
        raise MetricsError("Cannot compute class frequencies of an empty label list")
    return {label: counts[label] / total for label in LABEL_ORDER}


def random_rate(frequencies: Mapping[DisorderLabel, float]) -> dict[DisorderLabel, float]:
    """
    Expected per-class accuracy (percent) of guessing each class with its own frequency.

    Raises:
        MetricsError: If the frequencies do not sum to 1
    """
    total = sum(frequencies.values())
    if not np.isclose(total, 1.0, atol=1e-6):
        raise MetricsError(f"Class frequencies must sum to 1, got {total}")
    return {label: 100 * frequencies.get(label, 0.0) ** 2 for label in LABEL_ORDER}


def random_rate_report(frequencies: Mapping[DisorderLabel, float]) -> MetricsReport:
    """Random-rate row; F1 and confusion counts are absent."""
    accuracies = random_rate(frequencies)
    return MetricsReport(
        per_class={label: ClassMetrics(acc, None, 0) for label, acc in accuracies.items()},
        macro_accuracy=macro_average(list(accuracies.values())),
        macro_f1=None,
        confusion=[],
        strategy=str(Strategy.RANDOM_RATE),
    )


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Element-wise mean over repeats; confusion counts are summed."""
    if not reports:
        raise MetricsError("No reports to average")
    if len(reports) == 1:
        return reports[0]

    per_class = {}
    for label in LABEL_ORDER:
        rows = [r.per_class[label] for r in reports]
        per_class[label] = ClassMetrics(
            macro_average([m.accuracy for m in rows]),
            macro_average([m.f1 for m in rows]),
            int(round(np.mean([m.support for m in rows]))),
        )
    counted = [np.asarray(r.confusion) for r in reports if r.confusion]
    return MetricsReport(
        per_class=per_class,
        macro_accuracy=macro_average([r.macro_accuracy for r in reports]),
        macro_f1=macro_average([r.macro_f1 for r in reports]),
        confusion=np.sum(counted, axis=0).tolist() if counted else [],
        undefined_classes=tuple(label for label in LABEL_ORDER if per_class[label].accuracy is None),
        strategy=reports[0].strategy,
    )


def _metric_columns(report: MetricsReport) -> dict[str, float | None]:
    columns = {}
    for label in LABEL_ORDER:
        columns[f"{label}_acc"] = report.per_class[label].accuracy
        columns[f"{label}_f1"] = report.per_class[label].f1
    columns["macro_acc"] = report.macro_accuracy
    columns["macro_f1"] = report.macro_f1
    return columns


def deviation(report: MetricsReport, reference: MetricsReport) -> dict[str, float | None]:
    """Metric-wise difference report - reference; None where either side is absent."""
    ours, theirs = _metric_columns(report), _metric_columns(reference)
    return {
        key: None if ours[key] is None or theirs[key] is None else ours[key] - theirs[key]
        for key in ours
    }


def _cell(value: float | None, delta: float | None = None) -> str:
    if value is None:
        return "-"
    text = f"{value:.1f}"
    if delta is not None:
        arrow = "↑" if delta >= 0 else "↓"
        text += f" ({arrow} {abs(delta):.1f})"
    return text


def report_table(
    reports: Sequence[MetricsReport],
    reference: MetricsReport | None = None,
) -> pd.DataFrame:
    """
    One row per strategy: per-class Acc./F1 and macro Acc./F1.

    Macro cells of non-reference rows carry the deviation from `reference`;
    a row of the reference strategy has none.
    """
    rows = []
    for report in reports:
        columns = _metric_columns(report)
        is_reference = reference is None or report is reference or report.strategy == reference.strategy
        deltas = {} if is_reference else deviation(report, reference)
        row = {"strategy": report.strategy or "-"}
        for key, value in columns.items():
            row[key] = _cell(value, deltas.get(key) if key.startswith("macro") else None)
        rows.append(row)
    return pd.DataFrame(rows)


@dataclass
class TrainedRepeat:
    """One fitted model of a repeated experiment."""

    index: int
    seed: int
    backend: Backend
    formulator: Formulator
    history: TrainingResult


def train_repeats(
    strategy: Strategy,
    train: Sequence[Example],
    validation: Sequence[Example],
    cfg: TrainingConfig,
    make_backend: Callable[[int], Backend],
    make_formulator: Callable[[Backend], Formulator],
    weights: tuple[float, float] = JOINT_WEIGHTS,
    checkpoint_dir: Path | None = None,
    echo: Callable[[str], None] | None = None,
) -> Iterator[TrainedRepeat]:
    """
    Fit `cfg.repeats` models; repeat k is seeded with cfg.seed + k.

    With `checkpoint_dir`, each best checkpoint is saved to
    {checkpoint_dir}/repeat_{k}/best next to its history.jsonl.
    """
    echo = echo or _noop_echo
    for k in range(cfg.repeats):
        repeat_cfg = replace(cfg, seed=cfg.seed + k)
        echo(f"{strategy}: repeat {k + 1}/{cfg.repeats} (seed {repeat_cfg.seed})")
        backend = make_backend(repeat_cfg.seed)
        formulator = make_formulator(backend)
        history = train_strategy(
            strategy, backend, formulator, train, validation, repeat_cfg, weights=weights, echo=echo
        )
        if checkpoint_dir is not None:
            best = repeat_dir(checkpoint_dir, k) / "best"
            backend.save(best)
            history.write_history(best.parent / "history.jsonl")
        yield TrainedRepeat(k, repeat_cfg.seed, backend, formulator, history)


def repeat_dir(checkpoint_dir: Path, k: int) -> Path:
    return Path(checkpoint_dir) / f"repeat_{k}"


def evaluate_backend(
    strategy: Strategy,
    backend: Backend,
    formulator: Formulator,
    test: Sequence[tuple[str, str, DisorderLabel]],
    pool: DemonstrationPool | None = None,
    seed: int = 0,
    warn_callback: Callable[[str], None] | None = None,
) -> MetricsReport:
    """Predict the (record_id, utterance, gold) test triples and score them."""
    predictor = Predictor(strategy, backend, formulator, pool=pool, seed=seed)
    return evaluate(predictor.predict_many(test), strategy=str(strategy), warn_callback=warn_callback)


@dataclass
class ExperimentResult:
    strategy: Strategy
    report: MetricsReport
    repeats: list[MetricsReport] = field(default_factory=list)
    histories: list[TrainingResult] = field(default_factory=list)


def run_experiment(
    strategy: Strategy,
    train: Sequence[Example],
    validation: Sequence[Example],
    test: Sequence[tuple[str, str, DisorderLabel]],
    cfg: TrainingConfig,
    make_backend: Callable[[int], Backend],
    make_formulator: Callable[[Backend], Formulator],
    weights: tuple[float, float] = JOINT_WEIGHTS,
    checkpoint_dir: Path | None = None,
    echo: Callable[[str], None] | None = None,
) -> ExperimentResult:
    """
    Train `cfg.repeats` models, evaluate each on the test split and average.

    random_rate trains nothing: its report holds the expected per-class
    accuracies for the training-split class frequencies.

    Args:
        strategy: Formulation to run
        train: Training (utterance, label) pairs
        validation: Validation pairs
        test: (record_id, utterance, gold) triples
        cfg: Hyper-parameters
        make_backend: Fresh untrained backend for a seed
        make_formulator: Encoder for a backend
        weights: Joint-loss weights
        checkpoint_dir: Where to keep the best checkpoint of every repeat
        echo: Optional status callback
    """
    if strategy is Strategy.RANDOM_RATE:
        report = random_rate_report(class_frequencies([label for _, label in train]))
        return ExperimentResult(strategy, report, [report])

    pool = DemonstrationPool(train) if strategy is Strategy.PROMPT_DEMONSTRATIONS else None
    reports, histories = [], []
    for fitted in train_repeats(
        strategy, train, validation, cfg, make_backend, make_formulator, weights, checkpoint_dir, echo
    ):
        reports.append(
            evaluate_backend(strategy, fitted.backend, fitted.formulator, test, pool, fitted.seed, echo)
        )
        histories.append(fitted.history)
    return ExperimentResult(strategy, average_reports(reports), reports, histories)
