"""Shared minibatch loop used by every local-training algorithm."""

from typing import Callable

import numpy as np

from src.config import LocalTrainConfig
from src.data.models import Batch, ClientUpdate, Dataset, ModelSpec
from src.nn.dense import grad_params
from src.privacy.dp import clip_and_noise
from src.utils.errors import NumericError
from src.utils.logging import fl_logger

# (params, batch indices into the shard, local batch) -> descent direction
StepDirection = Callable[[np.ndarray, np.ndarray, Batch], np.ndarray]


def epoch_batches(n: int, batch_size: int, full_batch: bool, rng: np.random.Generator) -> list[np.ndarray]:
    """Index batches of one epoch; shuffled unless one batch covers the shard. The last batch may be short."""
    if full_batch or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[start : start + batch_size] for start in range(0, n, batch_size)]


def plain_direction(spec: ModelSpec) -> StepDirection:
    def direction(params: np.ndarray, indices: np.ndarray, batch: Batch) -> np.ndarray:
        return grad_params(spec, params, batch)

    return direction


def flagged_update(client_id: int, global_params: np.ndarray, shard: Dataset, reason: str) -> ClientUpdate:
    """Update that the server will leave out of aggregation."""
    fl_logger.debug(f"Client {client_id} diverged: {reason}")
    return ClientUpdate(client_id=client_id, trained_params=global_params.copy(), n_examples=len(shard), flagged=True, extras={"reason": reason})


def run_local_sgd(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: Dataset,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    direction: StepDirection,
    dp_rng: np.random.Generator | None = None,
    after_step: Callable[[np.ndarray, np.ndarray, Batch], np.ndarray] | None = None,
) -> tuple[np.ndarray, int]:
    """Run cfg.epochs epochs of theta <- theta - lr * direction(theta, batch).

    Args:
        spec: Model architecture
        global_params: Starting point theta^(t-1); never modified
        shard: Client data
        cfg: Epochs, batch size, learning rate and optional DPSGD settings
        rng: Client's shuffle stream for this round
        direction: Per-step descent direction
        dp_rng: Noise stream, required when cfg.dp is set
        after_step: Optional correction applied after each descent step (FedReg projection)

    Returns:
        (trained params, number of steps)

    Raises:
        NumericError: parameters stopped being finite
    """
    theta = global_params.copy()
    steps = 0
    for _ in range(cfg.epochs):
        for indices in epoch_batches(len(shard), cfg.batch_size, cfg.full_batch, rng):
            batch = shard.batch(indices)
            g = direction(theta, indices, batch)
            if cfg.dp is not None:
                g = clip_and_noise(g, cfg.dp, dp_rng)
            theta = theta - cfg.learning_rate * g
            if after_step is not None:
                theta = after_step(theta, indices, batch)
            if not np.all(np.isfinite(theta)):
                raise NumericError(f"non-finite parameters after step {steps + 1}")
            steps += 1
    return theta, steps
