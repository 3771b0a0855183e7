"""Loss of previous-round data before and after local training."""

import numpy as np

from src.data.models import Dataset, ModelSpec
from src.nn.dense import forward, per_example_loss
from src.utils.errors import ConfigurationError


def loss_prev(spec: ModelSpec, prev_params: np.ndarray, shard: Dataset) -> float:
    """Mean loss of theta^(t-1) on client j's data."""
    batch = shard.batch()
    return float(np.mean(per_example_loss(forward(spec, prev_params, batch.inputs), batch.targets)))


def loss_curr(spec: ModelSpec, trained_params: list[np.ndarray], shard: Dataset) -> float:
    """Mean over the examples of client j of the loss averaged across this round's locally trained params."""
    if not trained_params:
        raise ConfigurationError("loss_curr needs at least one locally trained parameter vector")
    batch = shard.batch()
    losses = np.stack([per_example_loss(forward(spec, theta, batch.inputs), batch.targets) for theta in trained_params])
    return float(np.mean(np.mean(losses, axis=0)))


def forgetting_increment(loss_curr_value: float, loss_prev_value: float) -> float:
    return loss_curr_value - loss_prev_value
