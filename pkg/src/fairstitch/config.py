"""Run configuration: defaults, TOML/JSON loading and validation.

A config file only needs the keys it changes; everything else comes from
`_DEFAULT_CONFIG`. Unknown keys, wrong types and out-of-range values raise
ConfigError naming the dotted path of the offending field.
"""

import copy
import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from .errors import ConfigError
from .fairloss import DEFAULT_ALPHA, ConstraintKind, EODenominator, FairnessConstraint
from .fairmetrics import EO_DIFF_MODES, MetricSettings
from .network import STITCH_INITS

logger = logging.getLogger(__name__)

_DEFAULT_CONFIG = {
    "data": {
        "source": "synthetic",
        "csv_path": "",
        "fractions": [0.6, 0.2, 0.2],
        "stratify": True,
        "balanced_val_fraction": 0.2,
        "synthetic": {
            "n": 20000,
            "d": 8,
            "cell_probs": [0.45, 0.45, 0.05, 0.05],
            "class_separation": 2.0,
            "attribute_shift": 1.5,
            "label_noise": 0.05,
        },
    },
    "model": {
        "hidden_dims": [32, 16],
        # null puts the stitch in front of the last block
        "stitch_index": None,
        "stitch_init": "random",
    },
    "constraint": {
        "kind": "eo",
        # null takes the per-kind default (20 for eo/ae, 1 for mmf)
        "alpha": None,
        "eo_denominator": "group_size",
    },
    "optimizer": {"lr": 0.01, "momentum": 0.9, "weight_decay": 5e-4},
    "epochs": {"erm": 500, "finetune": 1000},
    "evaluation": {
        "threshold": 0.5,
        "abroca_grid": 10001,
        "eo_diff_mode": "max",
        "interpolation_points": 101,
        "interpolation_ce_only": False,
        "interpolate_frozen": False,
    },
    "seeds": {"init": 7, "data": 7, "train": 7},
    "output": {"dir": "runs/default"},
    "sweep": {"train_seeds": []},
}

_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(__file__)), "config.toml")


@dataclass(frozen=True)
class SyntheticConfig:
    n: int
    d: int
    cell_probs: Tuple[float, ...]
    class_separation: float
    attribute_shift: float
    label_noise: float


@dataclass(frozen=True)
class DataConfig:
    source: str
    csv_path: str
    fractions: Tuple[float, ...]
    stratify: bool
    balanced_val_fraction: float
    synthetic: SyntheticConfig


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: Tuple[int, ...]
    stitch_index: Optional[int]
    stitch_init: str


@dataclass(frozen=True)
class ConstraintConfig:
    kind: str
    alpha: Optional[float]
    eo_denominator: str

    def build(self) -> FairnessConstraint:
        kind = ConstraintKind(self.kind)
        alpha = DEFAULT_ALPHA[kind] if self.alpha is None else self.alpha
        return FairnessConstraint(kind, alpha, EODenominator(self.eo_denominator))


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float
    momentum: float
    weight_decay: float


@dataclass(frozen=True)
class EpochsConfig:
    erm: int
    finetune: int


@dataclass(frozen=True)
class EvaluationConfig:
    threshold: float
    abroca_grid: int
    eo_diff_mode: str
    interpolation_points: int
    interpolation_ce_only: bool
    interpolate_frozen: bool

    def metric_settings(self) -> MetricSettings:
        return MetricSettings(self.threshold, self.abroca_grid, self.eo_diff_mode)


@dataclass(frozen=True)
class SeedsConfig:
    init: int
    data: int
    train: int


@dataclass(frozen=True)
class OutputConfig:
    dir: str


@dataclass(frozen=True)
class SweepConfig:
    train_seeds: Tuple[int, ...]


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    model: ModelConfig
    constraint: ConstraintConfig
    optimizer: OptimizerConfig
    epochs: EpochsConfig
    evaluation: EvaluationConfig
    seeds: SeedsConfig
    output: OutputConfig
    sweep: SweepConfig

    def to_dict(self) -> Dict[str, Any]:
        return _jsonable(asdict(self))

    def dims(self, input_dim: int) -> list:
        return [input_dim, *self.model.hidden_dims, 2]

    def seed_dict(self) -> Dict[str, int]:
        return {"init": self.seeds.init, "data": self.seeds.data, "train": self.seeds.train}


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _coerce(annotation, value, path: str):
    if is_dataclass(annotation):
        return _build(annotation, value, path)
    origin = get_origin(annotation)
    if origin is Union:
        inner = [arg for arg in get_args(annotation) if arg is not type(None)][0]
        return None if value is None else _coerce(inner, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", path)
        item_type = get_args(annotation)[0]
        return tuple(_coerce(item_type, v, f"{path}[{i}]") for i, v in enumerate(value))
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", path)
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    raise ConfigError(f"unsupported field type {annotation!r}", path)


def _build(cls, raw, path: str):
    if not isinstance(raw, Mapping):
        raise ConfigError(f"expected a table, got {raw!r}", path or None)
    hints = get_type_hints(cls)
    names = [f.name for f in fields(cls)]
    for key in raw:
        if key not in names:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    kwargs = {}
    for name in names:
        dotted = f"{path}.{name}" if path else name
        if name not in raw:
            raise ConfigError("missing key", dotted)
        kwargs[name] = _coerce(hints[name], raw[name], dotted)
    return cls(**kwargs)


def _merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError("unknown key", dotted)
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError("unknown key", dotted)
    node[keys[-1]] = value


def _check(condition: bool, message: str, path: str) -> None:
    if not condition:
        raise ConfigError(message, path)


def validate(config: RunConfig) -> RunConfig:
    """Range and enum checks that the type coercion cannot express."""
    data = config.data
    _check(data.source in ("synthetic", "csv"), f"must be 'synthetic' or 'csv', got '{data.source}'", "data.source")
    _check(data.source != "csv" or bool(data.csv_path), "required when data.source is 'csv'", "data.csv_path")
    _check(len(data.fractions) == 3 and all(f > 0 for f in data.fractions)
           and abs(sum(data.fractions) - 1.0) <= 1e-9,
           f"must be three positive numbers summing to 1, got {list(data.fractions)}", "data.fractions")
    _check(0.0 < data.balanced_val_fraction < 1.0, "must be in (0, 1)", "data.balanced_val_fraction")
    synth = data.synthetic
    _check(synth.n >= 1, "must be at least 1", "data.synthetic.n")
    _check(synth.d >= 3, "must be at least 3", "data.synthetic.d")
    _check(len(synth.cell_probs) == 4 and all(p > 0 for p in synth.cell_probs)
           and abs(sum(synth.cell_probs) - 1.0) <= 1e-9,
           "must be four positive numbers summing to 1", "data.synthetic.cell_probs")
    _check(0.0 <= synth.label_noise <= 1.0, "must be in [0, 1]", "data.synthetic.label_noise")

    model = config.model
    _check(len(model.hidden_dims) >= 1 and all(h > 0 for h in model.hidden_dims),
           "needs at least one positive hidden width", "model.hidden_dims")
    n_blocks = len(model.hidden_dims) + 1
    _check(model.stitch_index is None or 1 <= model.stitch_index <= n_blocks - 1,
           f"must be in [1, {n_blocks - 1}]", "model.stitch_index")
    _check(model.stitch_init in STITCH_INITS, f"must be one of {STITCH_INITS}", "model.stitch_init")

    kinds = tuple(k.value for k in ConstraintKind)
    _check(config.constraint.kind in kinds, f"must be one of {kinds}", "constraint.kind")
    denominators = tuple(d.value for d in EODenominator)
    _check(config.constraint.eo_denominator in denominators, f"must be one of {denominators}",
           "constraint.eo_denominator")
    _check(config.constraint.alpha is None or config.constraint.alpha >= 0, "must be non-negative", "constraint.alpha")

    _check(config.optimizer.lr > 0, "must be positive", "optimizer.lr")
    _check(0.0 <= config.optimizer.momentum < 1.0, "must be in [0, 1)", "optimizer.momentum")
    _check(config.optimizer.weight_decay >= 0, "must be non-negative", "optimizer.weight_decay")
    _check(config.epochs.erm >= 0, "must be non-negative", "epochs.erm")
    _check(config.epochs.finetune >= 0, "must be non-negative", "epochs.finetune")

    evaluation = config.evaluation
    _check(0.0 <= evaluation.threshold <= 1.0, "must be in [0, 1]", "evaluation.threshold")
    _check(evaluation.abroca_grid >= 2, "must be at least 2", "evaluation.abroca_grid")
    _check(evaluation.eo_diff_mode in EO_DIFF_MODES, f"must be one of {EO_DIFF_MODES}", "evaluation.eo_diff_mode")
    _check(evaluation.interpolation_points >= 2, "must be at least 2", "evaluation.interpolation_points")

    _check(bool(config.output.dir), "must not be empty", "output.dir")
    _check(len(set(config.sweep.train_seeds)) == len(config.sweep.train_seeds), "seeds must be distinct",
           "sweep.train_seeds")
    return config


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file '{path}' not found")
    try:
        if path.suffix == ".json":
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse '{path}': {e}") from e


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Load and validate the run configuration.

    Defaults are applied first, then the file, then the overrides.

    Args:
        path: TOML or JSON file (the bundled config.toml when None)
        overrides: Values by dotted key, e.g. {"seeds.train": 3}

    Returns:
        Validated RunConfig
    """
    path = _CONFIG_PATH if path is None else path
    raw = _merge(_DEFAULT_CONFIG, read_config_file(path))
    for dotted, value in (overrides or {}).items():
        _set_dotted(raw, dotted, value)
    config = validate(_build(RunConfig, raw, ""))
    logger.info("Loaded configuration from %s", path)
    return config


def default_config() -> RunConfig:
    return validate(_build(RunConfig, copy.deepcopy(_DEFAULT_CONFIG), ""))


def parse_seed_override(text: str) -> Tuple[str, int]:
    """'train=8' -> ('seeds.train', 8)."""
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or key not in ("init", "data", "train"):
        raise ConfigError(f"expected init=N, data=N or train=N, got '{text}'", "--seed-override")
    try:
        return f"seeds.{key}", int(value)
    except ValueError as e:
        raise ConfigError(f"seed must be an integer, got '{value}'", "--seed-override") from e
