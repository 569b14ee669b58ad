"""Toolkit configuration: typed defaults overridable from a YAML file."""

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .backend import DEFAULT_PRETRAINED
from .baselines import TOY
from .chat import DEFAULT_PRECEDENCE
from .formulation import (
    DEFAULT_DEFINITIONS,
    DEFAULT_VERBALIZER_WORDS,
    FormulationError,
    LabelDefinitions,
    Verbalizer,
    VerbalizerError,
)
from .labels import DisorderLabel
from .training import ConfigError, GridSpace, TrainingConfig

TOP_LEVEL_KEYS = {"verbalizer", "definitions", "label_precedence", "training", "grid", "baselines", "backend"}
BASELINE_KEYS = {"embedding", "word_fluency"}
BACKEND_KEYS = {"pretrained_name"}

# PyYAML reads "2e-5" as a string
FLOAT_FIELDS = {"learning_rate", "weight_decay", "warmup_ratio", "max_grad_norm"}


@dataclass
class ToolkitConfig:
    """
    Everything a run can be configured with.

    Attributes:
        verbalizer: Label-to-word mapping for the prompt strategies
        definitions: Entailment hypotheses per label
        label_precedence: Disorder order for multi-label collisions
        training: Fine-tuning hyper-parameters
        grid: Grid-search pools
        embedding_scorer: "toy" or a sentence-transformers model name
        word_fluency_scorer: "toy" or a token-classification model name
        pretrained_name: Hugging Face model loaded by the pretrained backend
    """

    verbalizer: Verbalizer = field(default_factory=Verbalizer)
    definitions: LabelDefinitions = field(default_factory=LabelDefinitions)
    label_precedence: tuple[DisorderLabel, ...] = DEFAULT_PRECEDENCE
    training: TrainingConfig = field(default_factory=TrainingConfig)
    grid: GridSpace = field(default_factory=GridSpace)
    embedding_scorer: str = TOY
    word_fluency_scorer: str = TOY
    pretrained_name: str = DEFAULT_PRETRAINED

    def snapshot(self) -> dict:
        """Plain-data view for run manifests."""
        return {
            "verbalizer": {str(k): v for k, v in self.verbalizer.words.items()},
            "definitions": {str(k): v for k, v in self.definitions.definitions.items()},
            "label_precedence": [str(label) for label in self.label_precedence],
            "training": self.training.to_dict(),
            "grid": {
                "learning_rates": list(self.grid.learning_rates),
                "batch_sizes": list(self.grid.batch_sizes),
                "optimizers": list(self.grid.optimizers),
            },
            "baselines": {"embedding": self.embedding_scorer, "word_fluency": self.word_fluency_scorer},
            "backend": {"pretrained_name": self.pretrained_name},
        }


def _check_keys(section: str, data: Mapping, allowed: set[str]) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{section}' must be a mapping")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"Unknown key(s) in {section}: {', '.join(sorted(map(str, unknown)))}")


def _label_map(section: str, data: Mapping, defaults: Mapping[DisorderLabel, str]) -> dict[DisorderLabel, str]:
    _check_keys(section, data, {str(label) for label in defaults})
    merged = dict(defaults)
    for key, value in data.items():
        merged[DisorderLabel(key)] = str(value)
    return merged


def config_from_dict(
    data: Mapping | None,
    warn_callback: Callable[[str], None] | None = None,
) -> ToolkitConfig:
    """
    Build a ToolkitConfig from parsed YAML; absent keys keep their defaults.

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    warn = warn_callback or (lambda _: None)
    data = data or {}
    _check_keys("config", data, TOP_LEVEL_KEYS)
    config = ToolkitConfig()
    try:
        if "verbalizer" in data:
            words = _label_map("verbalizer", data["verbalizer"], DEFAULT_VERBALIZER_WORDS)
            config.verbalizer = Verbalizer(words)
            warn(f"Warning: verbalizer overridden: {', '.join(f'{k}={v}' for k, v in words.items())}")
        if "definitions" in data:
            config.definitions = LabelDefinitions(_label_map("definitions", data["definitions"], DEFAULT_DEFINITIONS))
        if "label_precedence" in data:
            config.label_precedence = tuple(DisorderLabel(v) for v in data["label_precedence"])
        if "training" in data:
            allowed = {f.name for f in fields(TrainingConfig)}
            _check_keys("training", data["training"], allowed)
            values = {
                k: float(v) if k in FLOAT_FIELDS and v is not None else v for k, v in data["training"].items()
            }
            config.training = replace(config.training, **values)
        if "grid" in data:
            _check_keys("grid", data["grid"], {"learning_rates", "batch_sizes", "optimizers"})
            pools = {k: tuple(v) for k, v in data["grid"].items()}
            if "learning_rates" in pools:
                pools["learning_rates"] = tuple(float(v) for v in pools["learning_rates"])
            config.grid = GridSpace(**pools)
        if "baselines" in data:
            _check_keys("baselines", data["baselines"], BASELINE_KEYS)
            config.embedding_scorer = str(data["baselines"].get("embedding", TOY))
            config.word_fluency_scorer = str(data["baselines"].get("word_fluency", TOY))
        if "backend" in data:
            _check_keys("backend", data["backend"], BACKEND_KEYS)
            config.pretrained_name = str(data["backend"].get("pretrained_name", DEFAULT_PRETRAINED))
    except (ValueError, TypeError, VerbalizerError, FormulationError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    return config


def load_config(path: Path | None, warn_callback: Callable[[str], None] | None = None) -> ToolkitConfig:
    """Read a YAML configuration file; None gives the defaults."""
    if path is None:
        return ToolkitConfig()
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    return config_from_dict(data, warn_callback)
