"""
Pipeline orchestration behind the CLI commands.

Every command reads its inputs from a workspace directory, writes its
artifacts back into it and registers a RunManifest:

    data/records.jsonl, data/split.json, data/class_counts.tsv   prepare
    runs/{run_id}/repeat_{k}/best, history.jsonl                 train
    evaluation/{strategy}.json, evaluation/metrics.tsv           evaluate
    markers/records.tsv, markers/summary_*.tsv, discrimination   markers
    longitudinal/{marker}_{behaviour}_*                          longitudinal
    report.md                                                    report
    registry/{run_id}.json                                       every command
"""

import json
import shutil
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, replace
from enum import StrEnum
from pathlib import Path

import numpy as np
import pandas as pd

from .artifacts import Registry, RunManifest, compute_run_id, file_digest, now
from .backend import Backend
from .baselines import baseline_records, make_embedding_scorer, make_fluency_scorer
from .chat import SessionRecord
from .config import ToolkitConfig
from .corpus import (
    CorpusError,
    DatasetSplit,
    UtteranceRecord,
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
from .evaluation import (
    MetricsReport,
    Predictor,
    StrategyMismatchError,
    average_reports,
    class_frequencies,
    deviation,
    evaluate_backend,
    random_rate_report,
    repeat_dir,
    report_table,
    train_repeats,
)
from .formulation import DemonstrationPool, Formulator, Strategy
from .labels import DisorderLabel
from .markers import (
    BASELINE_KINDS,
    DISORDER_KINDS,
    MODEL_KINDS,
    MarkerError,
    MarkerKind,
    MarkerRecord,
    MarkerSeries,
    build_series,
    cohort_summary,
    read_marker_records,
    score_sessions,
    summary_table,
    write_marker_records,
)
from .stats import (
    Behaviour,
    behaviour_association,
    cohort_discrimination,
    onset_severity_table,
    plot_association,
)
from .synthetic import LAYOUTS, write_corpus
from .training import Example, grid_search

BEST = "best"

# Deviations in the classification table are taken against this strategy
REFERENCE_STRATEGY = Strategy.STANDARD_FINETUNE

# Subjects need this many sessions to enter the longitudinal analyses
LONGITUDINAL_MIN_SESSIONS = 3

COMMUNICATION_TABLE_KINDS = (MarkerKind.COMMUNICATION, *BASELINE_KINDS)


class MissingArtifactError(Exception):
    """Raised when an upstream artifact has not been produced yet."""

    def __init__(self, artifact: str, command: str):
        super().__init__(f"{artifact} not found; run `disorder-markers {command}` first")
        self.artifact = artifact
        self.command = command


class BackendKind(StrEnum):
    PRETRAINED = "pretrained"
    TINY = "tiny"


def _noop_echo(_: str) -> None:
    """No-op function for echo when none is provided."""
    pass


@dataclass(frozen=True)
class Workspace:
    """Paths of every artifact below one workspace directory."""

    root: Path

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def records_path(self) -> Path:
        return self.data_dir / "records.jsonl"

    @property
    def split_path(self) -> Path:
        return self.data_dir / "split.json"

    @property
    def class_counts_path(self) -> Path:
        return self.data_dir / "class_counts.tsv"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    @property
    def evaluation_dir(self) -> Path:
        return self.root / "evaluation"

    @property
    def metrics_path(self) -> Path:
        return self.evaluation_dir / "metrics.tsv"

    @property
    def markers_dir(self) -> Path:
        return self.root / "markers"

    @property
    def marker_records_path(self) -> Path:
        return self.markers_dir / "records.tsv"

    @property
    def longitudinal_dir(self) -> Path:
        return self.root / "longitudinal"

    @property
    def report_path(self) -> Path:
        return self.root / "report.md"

    @property
    def registry(self) -> Registry:
        return Registry(self.root / "registry")


def _require(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(str(path), command)
    return path


def _digests(*paths: Path) -> dict[str, str]:
    return {str(p): file_digest(p) for p in paths}


def _register(
    ws: Workspace,
    run_id: str,
    command: str,
    config: dict,
    inputs: dict[str, str],
    seed: int,
    outputs: Sequence[Path | str],
    started_at: str,
    extra: dict | None = None,
) -> RunManifest:
    manifest = RunManifest(
        run_id=run_id,
        command=command,
        config=config,
        inputs=inputs,
        seed=seed,
        outputs=[str(p) for p in outputs],
        started_at=started_at,
        finished_at=now(),
        extra=extra or {},
    )
    ws.registry.write(manifest)
    return manifest


def _load_records(ws: Workspace) -> list[UtteranceRecord]:
    return read_records(_require(ws.records_path, "prepare"))


def _load_split(ws: Workspace) -> tuple[list[UtteranceRecord], DatasetSplit[UtteranceRecord]]:
    records = _load_records(ws)
    return records, read_split_manifest(_require(ws.split_path, "prepare"), records)


def _examples(items: Sequence[tuple[UtteranceRecord, DisorderLabel]]) -> list[Example]:
    return [(record.utterance_text, label) for record, label in items]


def _test_items(split: DatasetSplit[UtteranceRecord]) -> list[tuple[str, str, DisorderLabel]]:
    return [(record.record_id, record.utterance_text, label) for record, label in split.test]


def backend_factory(kind: BackendKind, cfg: ToolkitConfig, texts: Sequence[str]) -> Callable[[int], Backend]:
    """
    Fresh untrained backends for a seed.

    The tiny vocabulary covers `texts` (the training and validation
    utterances) plus the verbalizer and definition words; test-only words
    map to [UNK].
    """
    if BackendKind(kind) is BackendKind.TINY:
        vocabulary = [
            *texts,
            " ".join(cfg.verbalizer.words.values()),
            *cfg.definitions.definitions.values(),
        ]
        return lambda seed: Backend.tiny(vocabulary, seed=seed)
    return lambda seed: Backend.pretrained(cfg.pretrained_name, seed=seed)


def formulator_factory(cfg: ToolkitConfig, echo: Callable[[str], None]) -> Callable[[Backend], Formulator]:
    return lambda backend: Formulator(
        backend.tokenizer,
        cfg.verbalizer,
        cfg.definitions,
        max_length=backend.max_length,
        warn_callback=echo,
    )


def synth(out_dir: Path, layout: str = "full", seed: int = 0, echo: Callable[[str], None] | None = None) -> list[Path]:
    """Write the synthetic CHAT corpus."""
    if layout not in LAYOUTS:
        raise CorpusError(f"Unknown layout {layout!r}; choose from {', '.join(LAYOUTS)}")
    return write_corpus(Path(out_dir), LAYOUTS[layout], seed=seed, echo=echo)


def prepare(
    corpus_dir: Path,
    ws: Workspace,
    cfg: ToolkitConfig,
    seed: int = 0,
    echo: Callable[[str], None] | None = None,
) -> RunManifest:
    """
    Parse a CHAT corpus into records, a stratified split and class counts.

    A corpus whose files only hold interviewer tiers yields empty records
    and a warning.

    Raises:
        CorpusError: If no .cha file could be parsed
    """
    echo = echo or _noop_echo
    started = now()
    corpus_dir = Path(corpus_dir)
    load = load_corpus(corpus_dir, precedence=cfg.label_precedence, echo=echo)
    if not load.sessions and not load.empty:
        raise CorpusError(f"No parseable CHAT files in {corpus_dir}")

    records = records_from_sessions(load.sessions)
    items = labelled(records)
    if items:
        split = stratified_split(items, seed=seed, warn_callback=echo)
    else:
        echo("Warning: the corpus has no participant utterances; records and split are empty")
        split = DatasetSplit([], [], [], seed=seed)

    write_records(records, ws.records_path)
    write_split_manifest(split, ws.split_path)
    class_count_table(load.sessions).to_csv(ws.class_counts_path, sep="\t", index=False)

    echo(f"Parsed {len(load.sessions)} session(s), {len(items)} labelled utterance(s)")
    echo(f"Split: {len(split.train)} train / {len(split.validation)} validation / {len(split.test)} test")

    config = {"label_precedence": [str(label) for label in cfg.label_precedence]}
    inputs = _digests(corpus_dir)
    return _register(
        ws,
        compute_run_id("prepare", config, inputs, seed),
        "prepare",
        config,
        inputs,
        seed,
        [ws.records_path, ws.split_path, ws.class_counts_path],
        started,
        {"sessions": len(load.sessions), "empty": [str(p) for p in load.empty], "failed": len(load.failed)},
    )


def train(
    ws: Workspace,
    cfg: ToolkitConfig,
    strategy: Strategy,
    seed: int = 0,
    backend: BackendKind = BackendKind.TINY,
    repeats: int | None = None,
    search: bool = False,
    echo: Callable[[str], None] | None = None,
) -> RunManifest:
    """
    Fine-tune `repeats` models under one strategy and checkpoint each.

    With `search`, the learning rate, batch size and optimizer come from a
    grid search on the validation split first.
    """
    echo = echo or _noop_echo
    started = now()
    strategy = Strategy(strategy)
    _, split = _load_split(ws)
    train_examples, validation = _examples(split.train), _examples(split.validation)
    if not train_examples:
        raise CorpusError("The training split is empty")

    training = replace(cfg.training, seed=seed, repeats=repeats or cfg.training.repeats)
    config = {**cfg.snapshot(), "training": training.to_dict()}
    inputs = _digests(ws.records_path, ws.split_path)
    key = {"strategy": str(strategy), "backend": str(backend), "search": search}
    run_id = compute_run_id("train", config, inputs, seed, key)
    run_dir = ws.runs_dir / run_id
    if run_dir.exists():
        shutil.rmtree(run_dir)

    extra = dict(key)
    outputs: list[Path] = []
    if strategy is Strategy.RANDOM_RATE:
        frequencies = class_frequencies([label for _, label in train_examples])
        extra["frequencies"] = {str(k): v for k, v in frequencies.items()}
        echo("random_rate has no model; stored the training-split class frequencies")
    else:
        seen = [text for text, _ in (*train_examples, *validation)]
        make_backend = backend_factory(backend, cfg, seen)
        make_formulator = formulator_factory(cfg, echo)
        if search:
            grid = grid_search(
                strategy,
                lambda: make_backend(seed),
                make_formulator,
                train_examples,
                validation,
                training,
                cfg.grid,
                echo=echo,
            )
            training = grid.best
            extra["grid_trials"] = [asdict(t) for t in grid.trials]
            echo(
                f"Grid search picked lr={training.learning_rate}, "
                f"batch_size={training.batch_size}, optimizer={training.optimizer}"
            )
        losses = []
        for fitted in train_repeats(
            strategy,
            train_examples,
            validation,
            training,
            make_backend,
            make_formulator,
            checkpoint_dir=run_dir,
            echo=echo,
        ):
            losses.append(fitted.history.best_validation_loss)
            outputs.append(repeat_dir(run_dir, fitted.index))
        extra.update(
            repeats=training.repeats,
            validation_losses=losses,
            best_repeat=int(np.argmin(losses)),
            trained_config=training.to_dict(),
        )
    return _register(ws, run_id, "train", config, inputs, seed, outputs, started, extra)


def _trained_run(ws: Workspace, strategy: Strategy) -> RunManifest:
    manifest = ws.registry.latest("train", strategy=str(strategy))
    if manifest is None:
        raise MissingArtifactError(f"A trained {strategy} model", f"train --strategy {strategy}")
    return manifest


def _load_backend(ws: Workspace, run: RunManifest, k: int) -> Backend:
    path = repeat_dir(ws.runs_dir / run.run_id, k) / "best"
    try:
        return Backend.load(path)
    except FileNotFoundError:
        raise MissingArtifactError(str(path), f"train --strategy {run.extra['strategy']}") from None


def _read_report(path: Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(path.read_text(encoding="utf-8"))["report"])


def reference_report(ws: Workspace) -> tuple[MetricsReport, RunManifest]:
    """
    Latest evaluated standard_finetune report, the base of every deviation.

    Raises:
        MissingArtifactError: If standard_finetune has not been evaluated
    """
    command = f"evaluate --strategy {REFERENCE_STRATEGY}"
    manifest = ws.registry.latest("evaluate", strategy=str(REFERENCE_STRATEGY))
    if manifest is None:
        raise MissingArtifactError(f"An evaluated {REFERENCE_STRATEGY} reference", command)
    path = _require(ws.evaluation_dir / f"{REFERENCE_STRATEGY}.json", command)
    return _read_report(path), manifest


def metrics_table(ws: Workspace, reference: MetricsReport) -> pd.DataFrame:
    """Every evaluated strategy in strategy order; macro cells carry deviations from `reference`."""
    reports = []
    for strategy in Strategy:
        path = ws.evaluation_dir / f"{strategy}.json"
        if path.exists():
            reports.append(_read_report(path))
    return report_table(reports, reference)


def evaluate(
    ws: Workspace,
    cfg: ToolkitConfig,
    strategy: Strategy,
    seed: int = 0,
    echo: Callable[[str], None] | None = None,
) -> RunManifest:
    """
    Score the trained repeats of `strategy` on the test split and average them.

    Deviations are taken against the evaluated standard_finetune report, so
    that strategy is evaluated first. random_rate is an ordinary row built
    from the training-split class frequencies.

    Raises:
        MissingArtifactError: If the model or the standard_finetune reference is missing
    """
    echo = echo or _noop_echo
    started = now()
    strategy = Strategy(strategy)
    _, split = _load_split(ws)
    test = _test_items(split)
    if not test:
        raise CorpusError("The test split is empty")
    train_examples = _examples(split.train)

    inputs = _digests(ws.records_path, ws.split_path)
    extra: dict = {"strategy": str(strategy), "train_run": None, "reference_run": None}
    reference = None
    if strategy is not REFERENCE_STRATEGY:
        reference, reference_run = reference_report(ws)
        extra["reference_run"] = reference_run.run_id
        inputs[str(ws.registry.path(reference_run.run_id))] = file_digest(ws.registry.path(reference_run.run_id))

    if strategy is Strategy.RANDOM_RATE:
        report = random_rate_report(class_frequencies([label for _, label in train_examples]))
        repeats = [report]
    else:
        trained = _trained_run(ws, strategy)
        extra["train_run"] = trained.run_id
        inputs[str(ws.registry.path(trained.run_id))] = file_digest(ws.registry.path(trained.run_id))
        pool = DemonstrationPool(train_examples) if strategy is Strategy.PROMPT_DEMONSTRATIONS else None
        make_formulator = formulator_factory(cfg, echo)
        repeats = []
        for k in range(trained.extra["repeats"]):
            echo(f"Evaluating {strategy} repeat {k + 1}/{trained.extra['repeats']}")
            backend = _load_backend(ws, trained, k)
            repeats.append(
                evaluate_backend(strategy, backend, make_formulator(backend), test, pool, seed + k, echo)
            )
        report = average_reports(repeats)
    reference = reference or report

    ws.evaluation_dir.mkdir(parents=True, exist_ok=True)
    report_path = ws.evaluation_dir / f"{strategy}.json"
    payload = {
        "report": report.to_dict(),
        "repeats": [r.to_dict() for r in repeats],
        "reference": reference.to_dict(),
        "deviation": deviation(report, reference),
    }
    report_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    metrics_table(ws, reference).to_csv(ws.metrics_path, sep="\t", index=False)

    macro_acc = "-" if report.macro_accuracy is None else f"{report.macro_accuracy:.1f}"
    macro_f1 = "-" if report.macro_f1 is None else f"{report.macro_f1:.1f}"
    echo(f"{strategy}: macro accuracy {macro_acc}, macro F1 {macro_f1}")

    extra.update(macro_accuracy=report.macro_accuracy, macro_f1=report.macro_f1)
    config = cfg.snapshot()
    run_id = compute_run_id("evaluate", config, inputs, seed, {"strategy": str(strategy)})
    return _register(ws, run_id, "evaluate", config, inputs, seed, [report_path, ws.metrics_path], started, extra)


def resolve_strategy(ws: Workspace, name: str) -> tuple[Strategy, RunManifest]:
    """
    Strategy and train run to score sessions with.

    `best` picks the evaluated strategy with the highest stored macro F1.
    """
    if name == BEST:
        evaluated = ws.registry.best("evaluate", "macro_f1")
        if evaluated is None:
            raise MissingArtifactError("An evaluated strategy", "evaluate")
        strategy = Strategy(evaluated.extra["strategy"])
        run_id = evaluated.extra["train_run"]
        if not ws.registry.path(run_id).exists():
            raise MissingArtifactError(f"Train run {run_id}", f"train --strategy {strategy}")
        return strategy, ws.registry.read(run_id)
    strategy = Strategy(name)
    if not strategy.trainable:
        raise StrategyMismatchError(f"{strategy} has no model to score sessions with")
    return strategy, _trained_run(ws, strategy)


def longitudinal_subjects(sessions: Sequence[SessionRecord]) -> set[str]:
    subsets = longitudinal_subset(sessions, LONGITUDINAL_MIN_SESSIONS)
    return {subject.subject_id for members in subsets.values() for subject in members}


def longitudinal_series(
    records: Sequence[MarkerRecord],
    sessions: Sequence[SessionRecord],
    kind: MarkerKind,
) -> list[MarkerSeries]:
    """Series of one marker kind for the subjects of the longitudinal subset."""
    keep = longitudinal_subjects(sessions)
    return [s for s in build_series(records, kind) if s.subject_id in keep]


def _long_summary(series_by_kind: dict[MarkerKind, list[MarkerSeries]], warn) -> pd.DataFrame:
    frames = {str(kind): cohort_summary(series, kind, warn) for kind, series in series_by_kind.items()}
    return pd.concat(frames, names=["kind"]).reset_index()


def markers(
    ws: Workspace,
    cfg: ToolkitConfig,
    strategy: str = BEST,
    seed: int = 0,
    echo: Callable[[str], None] | None = None,
) -> RunManifest:
    """
    Score every session with a trained model and the two baselines.

    The model is the repeat with the lowest validation loss of the resolved
    train run. Cohort summaries and discrimination tests cover the
    longitudinal subset.
    """
    echo = echo or _noop_echo
    started = now()
    records, split = _load_split(ws)
    sessions = sessions_from_records(records)
    resolved, trained = resolve_strategy(ws, strategy)
    echo(f"Scoring sessions with {resolved} (run {trained.run_id})")

    backend = _load_backend(ws, trained, trained.extra.get("best_repeat", 0))
    pool = DemonstrationPool(_examples(split.train)) if resolved is Strategy.PROMPT_DEMONSTRATIONS else None
    predictor = Predictor(resolved, backend, formulator_factory(cfg, echo)(backend), pool=pool, seed=seed)
    marker_records = score_sessions(predictor, sessions, MODEL_KINDS, echo=echo)
    marker_records += baseline_records(
        sessions,
        make_embedding_scorer(cfg.embedding_scorer, seed=seed),
        make_fluency_scorer(cfg.word_fluency_scorer),
        echo=echo,
    )
    write_marker_records(marker_records, ws.marker_records_path)

    series = {kind: longitudinal_series(marker_records, sessions, kind) for kind in MarkerKind}
    if not any(series.values()):
        echo(f"Warning: no subject has {LONGITUDINAL_MIN_SESSIONS} or more sessions; summaries are empty")
    outputs = [ws.marker_records_path]
    for name, kinds in (("communication", COMMUNICATION_TABLE_KINDS), ("disorders", DISORDER_KINDS)):
        path = ws.markers_dir / f"summary_{name}.tsv"
        _long_summary({k: series[k] for k in kinds}, echo).to_csv(path, sep="\t", index=False)
        outputs.append(path)
    discrimination_path = ws.markers_dir / "discrimination.tsv"
    pd.concat([cohort_discrimination(series[k], k) for k in MarkerKind]).to_csv(
        discrimination_path, sep="\t", index=False
    )
    outputs.append(discrimination_path)
    echo(f"Wrote {len(marker_records)} marker value(s) for {len(sessions)} session(s)")

    config = cfg.snapshot()
    inputs = _digests(ws.records_path, ws.split_path, ws.registry.path(trained.run_id))
    key = {"strategy": str(resolved), "train_run": trained.run_id}
    run_id = compute_run_id("markers", config, inputs, seed, key)
    return _register(ws, run_id, "markers", config, inputs, seed, outputs, started, key)


def longitudinal(
    ws: Workspace,
    kind: MarkerKind = MarkerKind.COMMUNICATION,
    behaviour: Behaviour = Behaviour.MMSE,
    echo: Callable[[str], None] | None = None,
) -> RunManifest:
    """
    Correlate marker change with MMSE or CDR over the longitudinal subjects.

    Raises:
        MarkerError: If no subject has a long enough series of `kind`
        StatisticsError: If the correlation is undefined
    """
    echo = echo or _noop_echo
    started = now()
    kind, behaviour = MarkerKind(kind), Behaviour(behaviour)
    marker_records = read_marker_records(_require(ws.marker_records_path, "markers"))
    sessions = sessions_from_records(_load_records(ws))
    series = longitudinal_series(marker_records, sessions, kind)
    if not series:
        raise MarkerError(f"No subject with {LONGITUDINAL_MIN_SESSIONS} or more sessions has a {kind} series")

    by_subject = {subject.subject_id: subject.sessions for subject in group_subjects(sessions)}
    result = behaviour_association(series, by_subject, behaviour, warn_callback=echo)

    stem = f"{kind}_{behaviour}"
    out = ws.longitudinal_dir
    out.mkdir(parents=True, exist_ok=True)
    points_path = out / f"{stem}_points.tsv"
    tests_path = out / f"{stem}_tests.tsv"
    onset_path = out / f"{stem}_onset.tsv"
    result.point_table().to_csv(points_path, sep="\t", index=False)
    tests = pd.DataFrame(
        [
            {
                "marker": str(kind),
                "behaviour": str(behaviour),
                **result.result.to_record("pearson"),
                "sign_adjusted_r": result.sign_adjusted_r,
                "excluded": len(result.excluded),
            }
        ]
    )
    tests.to_csv(tests_path, sep="\t", index=False)
    onset_severity_table(result.points, series).to_csv(onset_path, sep="\t")
    plot_path = plot_association(result, out / f"{stem}.png", kind)
    echo(
        f"{kind} vs {behaviour}: r = {result.result.statistic:.3f}, "
        f"p = {result.result.p_value:.3g}, n = {result.result.n}"
    )

    inputs = _digests(ws.records_path, ws.marker_records_path)
    key = {"marker": str(kind), "behaviour": str(behaviour)}
    run_id = compute_run_id("longitudinal", {}, inputs, 0, key)
    outputs = [points_path, tests_path, onset_path, plot_path]
    return _register(ws, run_id, "longitudinal", {}, inputs, 0, outputs, started, key)


def _fenced(frame: pd.DataFrame, index: bool = False) -> str:
    if frame.empty:
        return "_Empty._"
    return "```\n" + frame.to_string(index=index) + "\n```"


def _absent(command: str) -> str:
    return f"_Not available: run `disorder-markers {command}` to produce it._"


def _read_tsv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)


def report(ws: Workspace, echo: Callable[[str], None] | None = None) -> Path:
    """Consolidate every available artifact into report.md; missing parts are marked absent."""
    echo = echo or _noop_echo
    lines = ["# Disorder-marker report", ""]

    lines += ["## Corpus", ""]
    if ws.class_counts_path.exists():
        lines.append(_fenced(_read_tsv(ws.class_counts_path)))
    else:
        lines.append(_absent("prepare"))

    lines += ["", "## Classification", ""]
    if ws.metrics_path.exists():
        lines.append(f"Macro cells carry the difference from the {REFERENCE_STRATEGY} row.")
        lines += ["", _fenced(_read_tsv(ws.metrics_path))]
    else:
        lines.append(_absent("evaluate"))

    lines += ["", "## Markers", ""]
    if ws.marker_records_path.exists() and ws.records_path.exists():
        marker_records = read_marker_records(ws.marker_records_path)
        sessions = sessions_from_records(read_records(ws.records_path))
        for title, kinds in (
            ("Communication and baseline markers", COMMUNICATION_TABLE_KINDS),
            ("Disorder markers", DISORDER_KINDS),
        ):
            series = {k: longitudinal_series(marker_records, sessions, k) for k in kinds}
            lines += [f"### {title}", "", _fenced(summary_table(series).round(3), index=True), ""]
        discrimination = ws.markers_dir / "discrimination.tsv"
        if discrimination.exists():
            lines += ["### Cohort discrimination", "", _fenced(_read_tsv(discrimination))]
    else:
        lines.append(_absent("markers"))

    lines += ["", "## Longitudinal association", ""]
    tests = sorted(ws.longitudinal_dir.glob("*_tests.tsv")) if ws.longitudinal_dir.is_dir() else []
    if tests:
        for path in tests:
            stem = path.name.removesuffix("_tests.tsv")
            lines += [f"### {stem}", "", _fenced(_read_tsv(path)), ""]
            plot = path.with_name(f"{stem}.png")
            if plot.exists():
                lines += [f"![{stem}]({plot.relative_to(ws.root).as_posix()})", ""]
    else:
        lines.append(_absent("longitudinal"))

    ws.root.mkdir(parents=True, exist_ok=True)
    ws.report_path.write_text("\n".join(lines).rstrip() + "\n", encoding="utf-8")
    echo(f"Wrote {ws.report_path}")
    return ws.report_path
