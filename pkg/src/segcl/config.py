"""Experiment configuration: INI-style sections parsed into the typed
configs the trainer consumes. Unknown keys are rejected so typos surface as
errors naming the field."""

import configparser
import os
from dataclasses import dataclass

from .errors import ConfigError
from .network import SegNetConfig
from .regularization import StrategyConfig
from .trainer import TrainSchedule


@dataclass
class BenchmarkConfig:
    suite_seed: int | None = None
    train_paths: list | None = None
    eval_paths: list | None = None

    def __post_init__(self):
        explicit = self.train_paths is not None or self.eval_paths is not None
        if self.suite_seed is None and not explicit:
            raise ConfigError("benchmark", "need either suite_seed or explicit dataset paths")
        if self.suite_seed is not None and explicit:
            raise ConfigError("benchmark", "suite_seed and explicit dataset paths are exclusive")
        if explicit:
            if not self.train_paths or not self.eval_paths:
                raise ConfigError("benchmark", "need both train_paths and eval_paths")
            if len(self.train_paths) != len(self.eval_paths):
                raise ConfigError(
                    "benchmark",
                    f"{len(self.train_paths)} train paths vs {len(self.eval_paths)} eval paths",
                )
            if len(self.train_paths) < 2:
                raise ConfigError("benchmark", "need at least 2 domains")


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkConfig
    strategy: StrategyConfig
    schedule: TrainSchedule
    network: SegNetConfig
    output_dir: str
    num_seeds: int = 5

    def __post_init__(self):
        if self.num_seeds < 1:
            raise ConfigError("output.num_seeds", "must be >= 1")


def _convert(section, key, raw, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int_list":
            return [int(v.strip()) for v in raw.split(",") if v.strip()]
        if kind == "str_list":
            return [v.strip() for v in raw.split(",") if v.strip()]
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}", str(exc))


_SCHEMA = {
    "benchmark": {
        "suite_seed": int,
        "train_paths": "str_list",
        "eval_paths": "str_list",
    },
    "network": {
        "in_channels": int,
        "num_classes": int,
        "encoder_channels": "int_list",
        "bottleneck_channels": int,
        "dropout_rate": float,
    },
    "strategy": {
        "kind": str,
        "lambda": float,
        "beta_per_domain": float,
        "min_importance_to_freeze": float,
        "l2_coefficient": float,
        "dropout_rate": float,
        "importance_granularity": str,
    },
    "schedule": {
        "epochs_per_domain": int,
        "momentum": float,
        "initial_lr": float,
        "decay_factor": float,
        "decay_every_epochs": int,
        "batch_size": int,
        "seed": int,
    },
    "output": {
        "output_dir": str,
        "num_seeds": int,
    },
}

# dataclass field name differs from the config key
_RENAME = {("strategy", "lambda"): "lambda_"}


def _section_kwargs(parser, section):
    if not parser.has_section(section):
        return {}
    schema = _SCHEMA[section]
    kwargs = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"{section}.{key}", "unknown key")
        field = _RENAME.get((section, key), key)
        kwargs[field] = _convert(section, key, raw, schema[key])
    return kwargs


def load_experiment_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}")
    except configparser.Error as exc:
        raise ConfigError("config", f"parse error in {path}: {exc}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(section, "unknown section")

    bench_kwargs = _section_kwargs(parser, "benchmark")
    net_kwargs = _section_kwargs(parser, "network")
    strat_kwargs = _section_kwargs(parser, "strategy")
    sched_kwargs = _section_kwargs(parser, "schedule")
    out_kwargs = _section_kwargs(parser, "output")
    if "encoder_channels" in net_kwargs:
        net_kwargs["encoder_channels"] = tuple(net_kwargs["encoder_channels"])

    try:
        benchmark = BenchmarkConfig(**bench_kwargs)
        strategy = StrategyConfig(**strat_kwargs)
        network = SegNetConfig(**net_kwargs)
        schedule = TrainSchedule(**sched_kwargs)
    except TypeError as exc:
        raise ConfigError("config", str(exc))

    output_dir = out_kwargs.pop("output_dir", None)
    if output_dir is None:
        raise ConfigError("output.output_dir", "required")
    return ExperimentConfig(
        benchmark=benchmark,
        strategy=strategy,
        schedule=schedule,
        network=network,
        output_dir=output_dir,
        **out_kwargs,
    )


def resolve_output_dir(output_dir):
    """Relative output dirs nest under SEGCL_OUTPUT_ROOT when it is set."""
    root = os.environ.get("SEGCL_OUTPUT_ROOT", "")
    if root and not os.path.isabs(output_dir):
        return os.path.join(root, output_dir)
    return output_dir


def config_echo(cfg):
    """Full config as a JSON-ready dict, recorded in every run manifest."""
    return {
        "benchmark": {
            "suite_seed": cfg.benchmark.suite_seed,
            "train_paths": cfg.benchmark.train_paths,
            "eval_paths": cfg.benchmark.eval_paths,
        },
        "network": cfg.network.to_dict(),
        "strategy": {
            "kind": cfg.strategy.kind,
            "lambda": cfg.strategy.lambda_,
            "beta_per_domain": cfg.strategy.beta_per_domain,
            "min_importance_to_freeze": cfg.strategy.min_importance_to_freeze,
            "l2_coefficient": cfg.strategy.l2_coefficient,
            "dropout_rate": cfg.strategy.dropout_rate,
            "importance_granularity": cfg.strategy.granularity,
        },
        "schedule": {
            "epochs_per_domain": cfg.schedule.epochs_per_domain,
            "momentum": cfg.schedule.momentum,
            "initial_lr": cfg.schedule.initial_lr,
            "decay_factor": cfg.schedule.decay_factor,
            "decay_every_epochs": cfg.schedule.decay_every_epochs,
            "batch_size": cfg.schedule.batch_size,
            "seed": cfg.schedule.seed,
        },
        "output": {"output_dir": cfg.output_dir, "num_seeds": cfg.num_seeds},
    }
