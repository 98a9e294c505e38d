"""Configuration dataclasses and the JSON config file format.

One JSON file drives a whole pipeline. Top-level keys mirror the dataclasses
below: ``market``, ``model``, ``train_evaluator``, ``train_generator``,
``experiment``, ``logging``. Every key is optional; omitted keys take the
defaults here. Unknown keys are a ConfigError so typos fail fast.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# Misreport multipliers used by the incentive audits: 0.2, 0.4, ..., 3.0.
DEFAULT_AUDIT_GRID = [round(0.2 * i, 2) for i in range(1, 16)]
# Training uses a coarser grid; every mechanism rerun is a full generate +
# score + pay pass, so grid size is the dominant cost knob.
DEFAULT_TRAIN_GRID = [0.5, 0.8, 1.0, 1.25, 1.6]


@dataclass
class MarketConfig:
    """Synthetic market: candidate pools, bid/value draws, ground truth."""

    n_ads: int = 30
    n_organics: int = 20
    slots: int = 10
    feature_dim: int = 8
    value_log_mean: float = 0.0
    value_log_sigma: float = 0.5
    bid_log_sigma: float = 0.25
    num_ad_brands: int | None = None
    min_ad_start: int | None = None
    max_ads: int | None = None
    brand_dedup: bool = True
    organic_order_fixed: bool = True
    ctr_bias: float = -1.0
    cvr_bias: float = -1.2
    position_bias_span: float = 1.2
    neighbor_weight: float = 0.35
    seed: int = 7

    def resolved_num_brands(self):
        if self.num_ad_brands is not None:
            return self.num_ad_brands
        return max(2, self.n_ads // 3)

    def resolved_min_ad_start(self):
        if self.min_ad_start is not None:
            return self.min_ad_start
        return 3 if self.slots >= 3 else 1

    def resolved_max_ads(self):
        if self.max_ads is not None:
            return self.max_ads
        return max(1, self.slots // 3)

    def validate(self):
        if self.slots < 1:
            raise ConfigError("market.slots must be >= 1")
        if self.slots > self.n_ads + self.n_organics:
            raise ConfigError(
                f"market.slots={self.slots} exceeds candidate pool "
                f"{self.n_ads}+{self.n_organics}"
            )
        if self.feature_dim < 1:
            raise ConfigError("market.feature_dim must be >= 1")
        if not 1 <= self.resolved_min_ad_start() <= self.slots + 1:
            raise ConfigError("market.min_ad_start must lie in [1, slots+1]")
        if self.resolved_max_ads() < 0 or self.resolved_max_ads() > self.slots:
            raise ConfigError("market.max_ads must lie in [0, slots]")


@dataclass
class ModelConfig:
    """Shared network dimensions for the allocation and scoring models."""

    d_model: int = 32
    blocks: int = 2
    heads: int = 2
    ffn_hidden: int = 64
    tower_hidden: int = 32
    alpha: float = 5.0
    seed: int = 11

    def validate(self):
        if self.d_model % self.heads != 0:
            raise ConfigError("model.d_model must be divisible by model.heads")
        if self.alpha < 0:
            raise ConfigError("model.alpha must be >= 0")


@dataclass
class EvaluatorTrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 64
    epochs: int = 4
    w_pctr: float = 1.0
    w_pcvr: float = 1.0
    w_pay: float = 1.0
    rho: float = 1.0
    lambda_init: float = 0.0
    multiplier_step: float = 0.1
    multiplier_period: int = 100
    # L_pay reruns the full mechanism per slate ad and grid point, so it runs
    # on a subsample of each batch.
    pay_subsample: int = 4
    regret_grid: list[float] = field(default_factory=lambda: list(DEFAULT_TRAIN_GRID))
    mechanism_beam_size: int = 4
    regret_eval_records: int = 64
    holdout_fraction: float = 0.1
    seed: int = 23

    def validate(self):
        if min(self.w_pctr, self.w_pcvr, self.w_pay) < 0:
            raise ConfigError("train_evaluator loss weights must be >= 0")
        if self.rho <= 0:
            raise ConfigError("train_evaluator.rho must be > 0")
        if self.lambda_init < 0:
            raise ConfigError("train_evaluator.lambda_init must be >= 0")
        if self.multiplier_step < 0:
            raise ConfigError("train_evaluator.multiplier_step must be >= 0")
        validate_grid(self.regret_grid, "train_evaluator.regret_grid")


@dataclass
class GeneratorTrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 16
    epochs: int = 10
    beam_size: int = 8
    seed: int = 29

    def validate(self):
        if self.beam_size < 1:
            raise ConfigError("train_generator.beam_size must be >= 1")


@dataclass
class LoggingPolicyConfig:
    """How the logged training data is produced."""

    num_requests: int = 5000
    epsilon: float = 0.2
    seed: int = 101

    def validate(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("logging.epsilon must lie in [0, 1]")
        if self.num_requests < 0:
            raise ConfigError("logging.num_requests must be >= 0")


@dataclass
class ExperimentConfig:
    mechanisms: list[str] = field(default_factory=lambda: ["ugsp-fixed", "nga"])
    repetitions: int = 5
    eval_requests: int = 1000
    audit_requests: int = 50
    audit_grid: list[float] = field(default_factory=lambda: list(DEFAULT_AUDIT_GRID))
    serve_beam_size: int = 20
    base_seed: int = 9000
    # Wall-clock columns break byte-reproducibility, so they are opt-in and
    # normally live in the bench report instead.
    measure_latency: bool = False

    def validate(self):
        if self.repetitions < 1:
            raise ConfigError("experiment.repetitions must be >= 1")
        known = {"ugsp-fixed", "nga"}
        for name in self.mechanisms:
            if name not in known:
                raise ConfigError(f"experiment.mechanisms: unknown mechanism {name!r}")
        validate_grid(self.audit_grid, "experiment.audit_grid")


@dataclass
class PipelineConfig:
    market: MarketConfig = field(default_factory=MarketConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    logging: LoggingPolicyConfig = field(default_factory=LoggingPolicyConfig)
    train_evaluator: EvaluatorTrainConfig = field(default_factory=EvaluatorTrainConfig)
    train_generator: GeneratorTrainConfig = field(default_factory=GeneratorTrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self):
        for section in dataclasses.fields(self):
            getattr(self, section.name).validate()
        return self


def validate_grid(grid, where):
    if not grid:
        raise ConfigError(f"{where} must not be empty")
    if any(g <= 0 for g in grid):
        raise ConfigError(f"{where} multipliers must be > 0")
    if not any(abs(g - 1.0) < 1e-12 for g in grid):
        raise ConfigError(f"{where} must contain the truthful multiplier 1.0")


def _from_dict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


_SECTIONS = {
    "market": MarketConfig,
    "model": ModelConfig,
    "logging": LoggingPolicyConfig,
    "train_evaluator": EvaluatorTrainConfig,
    "train_generator": GeneratorTrainConfig,
    "experiment": ExperimentConfig,
}


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"config: unknown sections {sorted(unknown)}")
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _from_dict(cls, data[key], key)
    cfg = PipelineConfig(**kwargs)
    cfg.validate()
    return cfg


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(data)


def save_config(cfg, path):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")
