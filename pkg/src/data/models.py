from enum import Enum
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.utils.errors import ConfigurationError

# Row sums of soft-label targets must match 1 within this tolerance
TARGET_SUM_TOL = 1e-9


class ModelSpec(BaseModel):
    """Dense ReLU network: layer_dims = (input dim, hidden dims..., n_classes)."""

    model_config = ConfigDict(frozen=True)

    layer_dims: list[int]
    activation: Literal["relu"] = "relu"

    @field_validator("layer_dims")
    @classmethod
    def _check_dims(cls, dims: list[int]) -> list[int]:
        if len(dims) < 2:
            raise ValueError("layer_dims needs at least an input and an output dimension")
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
        if dims[-1] < 2:
            raise ValueError("output dimension (number of classes) must be >= 2")
        return list(dims)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every weight matrix."""
        return [(self.layer_dims[i], self.layer_dims[i + 1]) for i in range(self.n_layers)]

    @property
    def n_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes())


def _as_matrix(value: Any, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


class Batch(BaseModel):
    """Inputs with soft-label targets; every target row is a distribution."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    inputs: np.ndarray
    targets: np.ndarray

    @field_validator("inputs", mode="before")
    @classmethod
    def _inputs_matrix(cls, value: Any) -> np.ndarray:
        return _as_matrix(value, "inputs")

    @field_validator("targets", mode="before")
    @classmethod
    def _targets_matrix(cls, value: Any) -> np.ndarray:
        return _as_matrix(value, "targets")

    @model_validator(mode="after")
    def _check_rows(self) -> "Batch":
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(f"inputs have {self.inputs.shape[0]} rows but targets have {self.targets.shape[0]}")
        if self.targets.size and np.any(self.targets < 0):
            raise ValueError("targets must be non-negative")
        sums = self.targets.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > TARGET_SUM_TOL):
            raise ValueError("every target row must sum to 1")
        return self

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, indices: np.ndarray) -> "Batch":
        """Row subset; rows were validated already so no re-validation."""
        return Batch.model_construct(inputs=self.inputs[indices], targets=self.targets[indices])


def one_hot(label: int, n: int) -> np.ndarray:
    """Standard basis row e^(label) of length n."""
    if not 0 <= label < n:
        raise ConfigurationError(f"label {label} out of range for {n} classes")
    row = np.zeros(n, dtype=np.float64)
    row[label] = 1.0
    return row


def one_hot_matrix(labels: np.ndarray, n: int) -> np.ndarray:
    """Stack of one_hot rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ConfigurationError(f"labels out of range for {n} classes")
    out = np.zeros((labels.shape[0], n), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


class Dataset(BaseModel):
    """Labelled examples with features scaled to [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray
    labels: np.ndarray
    n_classes: int = Field(ge=2)

    @field_validator("features", mode="before")
    @classmethod
    def _features_matrix(cls, value: Any) -> np.ndarray:
        return _as_matrix(value, "features")

    @field_validator("labels", mode="before")
    @classmethod
    def _labels_vector(cls, value: Any) -> np.ndarray:
        return np.asarray(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one example")
        if self.labels.shape[0] != n:
            raise ValueError(f"{n} feature rows but {self.labels.shape[0]} labels")
        if np.any(self.features < 0.0) or np.any(self.features > 1.0):
            raise ValueError("features must lie in [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        return self

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset.model_construct(features=self.features[indices], labels=self.labels[indices], n_classes=self.n_classes)

    def batch(self, indices: np.ndarray | None = None) -> Batch:
        """Batch with one-hot targets, optionally restricted to indices."""
        if indices is None:
            features, labels = self.features, self.labels
        else:
            indices = np.asarray(indices, dtype=np.int64)
            features, labels = self.features[indices], self.labels[indices]
        return Batch.model_construct(inputs=features, targets=one_hot_matrix(labels, self.n_classes))


class PartitionScheme(str, Enum):
    """Ways of splitting a dataset across clients"""
    ONE_CLASS = "one_class"
    TWO_CLASS = "two_class"
    UNIFORM_RANDOM = "uniform_random"
    POWER_LAW_ONE_CLASS = "power_law_one_class"


class PartitionParams(BaseModel):
    """Scheme parameters; the power-law ones only matter for power_law_one_class. client_size fixes the one_class shard size."""

    model_config = ConfigDict(extra="forbid")

    power_law_exponent: float = Field(default=1.5, gt=0)
    min_client_size: int = Field(default=2, ge=1)
    client_size: int | None = Field(default=None, ge=1)


class ClientPartition(BaseModel):
    """Per-client example indices."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    assignments: list[np.ndarray]
    scheme: PartitionScheme

    @field_validator("assignments", mode="before")
    @classmethod
    def _index_arrays(cls, value: Any) -> list[np.ndarray]:
        return [np.asarray(a, dtype=np.int64).reshape(-1) for a in value]

    @model_validator(mode="after")
    def _check(self) -> "ClientPartition":
        if not self.assignments:
            raise ValueError("partition has no clients")
        for cid, idx in enumerate(self.assignments):
            if idx.size == 0:
                raise ValueError(f"client {cid} owns no examples")
        used = np.concatenate(self.assignments)
        if np.unique(used).size != used.size:
            raise ValueError("client index lists overlap")
        return self

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [int(a.size) for a in self.assignments]

    def used_indices(self) -> np.ndarray:
        return np.sort(np.concatenate(self.assignments))

    def validate_against(self, n_examples: int) -> None:
        """Raise if any index falls outside [0, n_examples)."""
        used = np.concatenate(self.assignments)
        if used.min() < 0 or used.max() >= n_examples:
            raise ConfigurationError(f"partition references indices outside [0, {n_examples})")

    def class_counts(self, dataset: Dataset) -> list[dict[int, int]]:
        """Label histogram of every client."""
        counts = []
        for idx in self.assignments:
            labels, freq = np.unique(dataset.labels[idx], return_counts=True)
            counts.append({int(k): int(v) for k, v in zip(labels, freq)})
        return counts


class ClientUpdate(BaseModel):
    """What one client sends back after local training."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    client_id: int
    trained_params: np.ndarray
    n_examples: int = Field(ge=1)
    n_steps: int = 0
    flagged: bool = False
    # Per-algorithm payload: SCAFFOLD "delta_c", FedCurv "fisher" / "fisher_weighted_params"
    extras: dict[str, Any] = Field(default_factory=dict)


class ServerState(BaseModel):
    """Global parameters plus algorithm-specific server extras."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    round_index: int = Field(default=0, ge=0)
    global_params: np.ndarray
    # SCAFFOLD global control variate c
    control_variate: np.ndarray | None = None


class RoundRecord(BaseModel):
    """Metrics of one federated round."""

    round: int = Field(ge=1)
    test_accuracy: float = Field(ge=0.0, le=1.0)
    sampled_clients: list[int] = Field(default_factory=list)
    client_loss_prev: dict[int, float] = Field(default_factory=dict)
    client_loss_curr: dict[int, float] = Field(default_factory=dict)
    mean_loss_prev: float | None = None
    mean_loss_curr: float | None = None
    mean_increment: float | None = None
    # Same clients and start, trained by the paired reference algorithm
    paired_loss_curr: float | None = None
    paired_increment: float | None = None
    fisher_correlation: float | None = None
    fisher_layer_correlations: list[float | None] = Field(default_factory=list)
    flagged_clients: int = 0

    def to_row(self) -> dict[str, Any]:
        """Flat row for rounds.csv (fixed column order)."""
        return {
            "round": self.round,
            "accuracy": self.test_accuracy,
            "loss_prev": self.mean_loss_prev,
            "loss_curr": self.mean_loss_curr,
            "increment": self.mean_increment,
            "paired_increment": self.paired_increment,
            "fisher_rho": self.fisher_correlation,
            "flagged": self.flagged_clients,
        }


ROUND_COLUMNS = ["round", "accuracy", "loss_prev", "loss_curr", "increment", "paired_increment", "fisher_rho", "flagged"]


class ReconResult(BaseModel):
    """Outcome of one gradient inversion attack."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    reconstruction: np.ndarray
    label: int
    objective: float
    psnr_db: float
    restarts: int = 0
    # Best-so-far objective after every iteration of the winning label
    best_trace: list[float] = Field(default_factory=list)
