"""Command-line interface for disorder-markers."""

from collections.abc import Callable
from contextlib import contextmanager
from functools import wraps
from pathlib import Path

import click

from . import pipeline
from .backend import NotAMaskError, SequenceTooLongError
from .chat import ChatParseError
from .config import load_config
from .corpus import CorpusError
from .evaluation import MetricsError, StrategyMismatchError
from .formulation import FormulationError, Strategy, VerbalizerError
from .markers import MarkerError, MarkerKind
from .pipeline import BEST, BackendKind, MissingArtifactError, Workspace
from .stats import Behaviour, StatisticsError
from .synthetic import LAYOUTS
from .training import ConfigError

# Errors caused by the inputs or options of a command
VALIDATION_ERRORS = (
    ConfigError,
    CorpusError,
    ChatParseError,
    FormulationError,
    VerbalizerError,
    SequenceTooLongError,
    NotAMaskError,
    StrategyMismatchError,
    MetricsError,
    MarkerError,
    StatisticsError,
)


class ValidationException(click.ClickException):
    """Invalid input, option or configuration."""

    exit_code = 2


class MissingArtifactException(click.ClickException):
    """An upstream command has not been run."""

    exit_code = 3


@contextmanager
def _handle_errors():
    try:
        yield
    except MissingArtifactError as e:
        raise MissingArtifactException(str(e)) from None
    except VALIDATION_ERRORS as e:
        raise ValidationException(str(e)) from None
    except click.ClickException:
        raise
    except Exception as e:
        raise click.ClickException(str(e)) from None


def workspace_options(f: Callable) -> Callable:
    """Add --workdir and --config, passing `ws` and `cfg` instead."""

    @click.option(
        "-w",
        "--workdir",
        type=click.Path(file_okay=False, path_type=Path),
        default=Path("./workspace"),
        show_default=True,
        help="Workspace directory holding every artifact",
    )
    @click.option(
        "-c",
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        help="YAML configuration file",
    )
    @wraps(f)
    def wrapper(workdir: Path, config_path: Path | None, **kwargs):
        with _handle_errors():
            cfg = load_config(config_path, warn_callback=click.echo)
        return f(ws=Workspace(workdir), cfg=cfg, **kwargs)

    return wrapper


seed_option = click.option("--seed", type=int, default=0, show_default=True, help="Random seed")


@click.group()
@click.version_option()
def cli():
    """disorder-markers: Language-disorder classification and longitudinal speech markers."""
    pass


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False, path_type=Path))
@click.option(
    "--layout",
    type=click.Choice(sorted(LAYOUTS)),
    default="full",
    show_default=True,
    help="Cohort and session layout of the corpus",
)
@seed_option
def synth(out_dir: Path, layout: str, seed: int):
    """
    Write a synthetic CHAT corpus to OUT_DIR.

    Disordered utterances are rarer in healthy subjects than in MCI, and
    rarer in MCI than in AD; fluency declines with baseline MMSE.
    """
    with _handle_errors():
        pipeline.synth(out_dir, layout=layout, seed=seed, echo=click.echo)


@cli.command()
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@seed_option
@workspace_options
def prepare(corpus_dir: Path, seed: int, ws: Workspace, cfg):
    """
    Parse CORPUS_DIR into records, a stratified split and class counts.

    Examples:

        disorder-markers prepare ./corpus --seed 0
    """
    with _handle_errors():
        manifest = pipeline.prepare(corpus_dir, ws, cfg, seed=seed, echo=click.echo)
    click.echo(f"Run {manifest.run_id}")


@cli.command()
@click.option(
    "-s",
    "--strategy",
    type=click.Choice([str(s) for s in Strategy]),
    required=True,
    help="Problem formulation to train",
)
@seed_option
@click.option(
    "--backend",
    "backend_kind",
    type=click.Choice([str(k) for k in BackendKind]),
    default=str(BackendKind.TINY),
    show_default=True,
    help="Offline tiny encoder, or the pre-trained encoder named in the configuration",
)
@click.option("--repeats", type=click.IntRange(min=1), help="Number of independently seeded models")
@click.option(
    "--search/--no-search",
    default=False,
    show_default=True,
    help="Grid-search learning rate, batch size and optimizer first",
)
@workspace_options
def train(strategy: str, seed: int, backend_kind: str, repeats: int | None, search: bool, ws: Workspace, cfg):
    """
    Fine-tune models under one strategy and checkpoint them.

    Examples:

        disorder-markers train --strategy standard_prompt --backend tiny --repeats 3
    """
    with _handle_errors():
        manifest = pipeline.train(
            ws,
            cfg,
            Strategy(strategy),
            seed=seed,
            backend=BackendKind(backend_kind),
            repeats=repeats,
            search=search,
            echo=click.echo,
        )
    click.echo(f"Run {manifest.run_id}")


@cli.command()
@click.option(
    "-s",
    "--strategy",
    type=click.Choice([str(s) for s in Strategy]),
    required=True,
    help="Strategy whose trained models to evaluate",
)
@seed_option
@workspace_options
def evaluate(strategy: str, seed: int, ws: Workspace, cfg):
    """Evaluate trained models on the test split."""
    with _handle_errors():
        manifest = pipeline.evaluate(ws, cfg, Strategy(strategy), seed=seed, echo=click.echo)
    click.echo(f"Run {manifest.run_id}")


@cli.command()
@click.option(
    "-s",
    "--strategy",
    type=click.Choice([BEST, *(str(s) for s in Strategy if s.trainable)]),
    default=BEST,
    show_default=True,
    help="Strategy to score sessions with; best picks the highest evaluated macro F1",
)
@seed_option
@workspace_options
def markers(strategy: str, seed: int, ws: Workspace, cfg):
    """Compute session markers, cohort summaries and discrimination tests."""
    with _handle_errors():
        manifest = pipeline.markers(ws, cfg, strategy, seed=seed, echo=click.echo)
    click.echo(f"Run {manifest.run_id}")


@cli.command()
@click.option(
    "-m",
    "--marker",
    type=click.Choice([str(k) for k in MarkerKind]),
    default=str(MarkerKind.COMMUNICATION),
    show_default=True,
    help="Marker whose change is correlated",
)
@click.option(
    "-b",
    "--behaviour",
    type=click.Choice([str(b) for b in Behaviour]),
    default=str(Behaviour.MMSE),
    show_default=True,
    help="Behavioural score",
)
@workspace_options
def longitudinal(marker: str, behaviour: str, ws: Workspace, cfg):
    """Correlate marker change with MMSE or CDR across subjects."""
    with _handle_errors():
        manifest = pipeline.longitudinal(ws, MarkerKind(marker), Behaviour(behaviour), echo=click.echo)
    click.echo(f"Run {manifest.run_id}")


@cli.command()
@workspace_options
def report(ws: Workspace, cfg):
    """Write report.md from every artifact in the workspace."""
    with _handle_errors():
        pipeline.report(ws, echo=click.echo)


def main():
    """Entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
