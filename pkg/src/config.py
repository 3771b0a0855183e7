"""Experiment configuration: typed sections, TOML parsing and provenance echo."""

import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from typing import Literal

import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.cfg.presets import BENCHMARK_PRESETS, deep_merge
from src.data.models import PartitionParams, PartitionScheme
from src.utils.errors import ConfigurationError


class AlgorithmName(str, Enum):
    SGD = "sgd"
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    FEDCURV = "fedcurv"
    SCAFFOLD = "scaffold"
    FEDREG = "fedreg"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DpConfig(_Section):
    """Gradient clipping bound C and noise scale sigma (noise std is sigma * C)."""

    clip_bound: float = Field(default=1.0, gt=0)
    noise_scale: float = Field(default=0.01, ge=0)


class FedRegConfig(_Section):
    gamma: float = Field(default=0.4, ge=0.0, le=1.0)
    eta_s: float = Field(default=0.2, gt=0)
    # Defaults to 0.01 * eta_s
    eta_p: float | None = None
    fgsm_steps: int = Field(default=10, ge=1)
    use_mg: bool = False
    clip_inputs: bool = False

    @model_validator(mode="after")
    def _fill_eta_p(self) -> "FedRegConfig":
        if self.eta_p is None:
            self.eta_p = 0.01 * self.eta_s
        if not 0 < self.eta_p <= self.eta_s:
            raise ValueError(f"eta_p must satisfy 0 < eta_p <= eta_s, got eta_p={self.eta_p}, eta_s={self.eta_s}")
        return self


class LocalTrainConfig(_Section):
    algorithm: AlgorithmName = AlgorithmName.FEDAVG
    epochs: int = Field(default=1, ge=1)
    batch_size: int = Field(default=10, ge=1)
    learning_rate: float = Field(default=0.1, gt=0)
    # Single batch holding the whole shard
    full_batch: bool = False
    mu: float = Field(default=0.0, ge=0)
    lam: float = Field(default=0.0, ge=0)
    fedreg: FedRegConfig = Field(default_factory=FedRegConfig)
    # Baselines with DPSGD when set
    dp: DpConfig | None = None


class SyntheticConfig(_Section):
    n_classes: int = Field(default=2, ge=2)
    dim: int = Field(default=2, ge=1)
    per_class: int = Field(default=50, ge=1)
    spread: float = Field(default=0.05, gt=0)


class DatasetConfig(_Section):
    source: Literal["synthetic", "idx"] = "synthetic"
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    images_path: str | None = None
    labels_path: str | None = None
    test_images_path: str | None = None
    test_labels_path: str | None = None
    n_classes: int | None = Field(default=None, ge=2)
    limit: int | None = Field(default=None, ge=1)
    test_limit: int | None = Field(default=None, ge=1)
    # Used when no separate test files are given
    test_fraction: float = Field(default=0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _paths_for_idx(self) -> "DatasetConfig":
        if self.source == "idx" and not (self.images_path and self.labels_path):
            raise ValueError("idx source needs images_path and labels_path")
        if bool(self.test_images_path) != bool(self.test_labels_path):
            raise ValueError("test_images_path and test_labels_path go together")
        return self


class PartitionConfig(_Section):
    scheme: PartitionScheme = PartitionScheme.ONE_CLASS
    n_clients: int = Field(default=10, ge=1)
    power_law_exponent: float = Field(default=1.5, gt=0)
    min_client_size: int = Field(default=2, ge=1)
    # Examples per one_class client; equal split of each class when omitted
    client_size: int | None = Field(default=None, ge=1)

    def to_params(self) -> PartitionParams:
        return PartitionParams(power_law_exponent=self.power_law_exponent, min_client_size=self.min_client_size, client_size=self.client_size)


class ModelConfig(_Section):
    """Hidden layer widths; input and output sizes come from the dataset."""

    hidden_dims: list[int] = Field(default_factory=lambda: [16])

    @model_validator(mode="after")
    def _positive(self) -> "ModelConfig":
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError("hidden_dims must all be >= 1")
        return self


class AttackConfig(_Section):
    defense: Literal["plain", "dpsgd", "fedreg-mg"] = "plain"
    iterations: int = Field(default=2000, ge=1)
    distance: Literal["cosine", "l2"] = "cosine"
    tv_weight: float = Field(default=0.0, ge=0)
    step_size: float = Field(default=1.0, gt=0)
    lr_schedule: Literal["multistep", "constant"] = "multistep"
    seed: int = 0
    targets: int = Field(default=10, ge=1)
    box_constraint: bool = True
    # Share of the iterations each class gets while searching for the label
    label_search_fraction: float = Field(default=0.1, gt=0, le=1)
    max_restarts: int = Field(default=3, ge=0)
    # (H, W) used for TV and image output; square side inferred when omitted
    image_shape: list[int] | None = None
    # "defense" matches candidates through the deployed defense, "plain" through a plain gradient step
    attacker_model: Literal["defense", "plain"] = "defense"
    # Step size of the fedreg-mg defense; train.fedreg.eta_s when omitted
    mg_eta_s: float | None = Field(default=None, gt=0)
    # FL rounds run before the attacked update is taken
    train_rounds: int = Field(default=0, ge=0)
    dp: DpConfig = Field(default_factory=DpConfig)

    @model_validator(mode="after")
    def _shape(self) -> "AttackConfig":
        if self.image_shape is not None and (len(self.image_shape) != 2 or min(self.image_shape) < 1):
            raise ValueError("image_shape must be [H, W] with positive entries")
        return self


class ExperimentConfig(_Section):
    preset: str | None = None
    seed: int = 0
    rounds: int = Field(default=20, ge=1)
    clients_per_round: int = Field(default=10, ge=1)
    weighted_aggregation: bool = False
    # Final accuracy of a reference (SGD) run for the R_a summary
    reference_accuracy: float | None = Field(default=None, gt=0, le=1)
    fisher_diagnostics: bool = True
    fisher_window: int = Field(default=10, ge=1)
    # Also train this algorithm each round from the same global params, unaggregated, for a paired forgetting increment
    paired_reference: AlgorithmName | None = None
    output_dir: str | None = None
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: LocalTrainConfig = Field(default_factory=LocalTrainConfig)
    attack: AttackConfig = Field(default_factory=AttackConfig)

    @model_validator(mode="after")
    def _clients(self) -> "ExperimentConfig":
        if self.clients_per_round > self.partition.n_clients:
            raise ValueError(f"clients_per_round={self.clients_per_round} exceeds partition.n_clients={self.partition.n_clients}")
        return self

    def resolve_output_dir(self, override: str | None = None) -> str:
        """--out flag, then the config, then $FEDREG_OUTPUT_DIR, then ./outputs."""
        return override or self.output_dir or os.environ.get("FEDREG_OUTPUT_DIR", "outputs")


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{key}: {item['msg']}")
    return "; ".join(parts)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Apply the preset (explicit keys win) and validate."""
    preset = raw.get("preset")
    if preset is not None:
        if preset not in BENCHMARK_PRESETS:
            raise ConfigurationError(f"preset: unknown preset {preset!r}, choose from {sorted(BENCHMARK_PRESETS)}")
        raw = deep_merge(BENCHMARK_PRESETS[preset], raw)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigurationError(_format_validation_error(e)) from e


def parse_config(path: str) -> ExperimentConfig:
    """Read and validate a TOML experiment config.

    Raises:
        ConfigurationError: missing file, TOML syntax error (with line and column) or
            a validation error naming the offending dotted key
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from e
    return config_from_dict(raw)


def dump_config(config: ExperimentConfig) -> str:
    """TOML text that parses back to an identical ExperimentConfig."""
    return tomli_w.dumps(config.model_dump(mode="json", exclude_none=True))


def echo_config(config: ExperimentConfig, output_dir: str) -> str:
    """Write config.echo.toml into the output directory and return its path."""
    os.makedirs(output_dir, exist_ok=True)
    path = os.path.join(output_dir, "config.echo.toml")
    with open(path, "w") as f:
        f.write(dump_config(config))
    return path
