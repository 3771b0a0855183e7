import numpy as np

from src.algorithms.base import flagged_update, run_local_sgd
from src.config import LocalTrainConfig
from src.data.models import Batch, ClientUpdate, Dataset, ModelSpec
from src.nn.dense import grad_params
from src.utils.errors import ConfigurationError, NumericError


def local_train_scaffold(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: Dataset,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    dp_rng: np.random.Generator | None = None,
    c_global: np.ndarray | None = None,
    c_local: np.ndarray | None = None,
) -> ClientUpdate:
    """Drift-corrected local training with control variates.

    Each step uses g - c_i + c. Afterwards the client variate is refreshed with the
    difference quotient c_i' = c_i - c + (theta^(t-1) - theta) / (steps * lr).

    Returns:
        ClientUpdate with extras "control_variate" (c_i') and "delta_c" (c_i' - c_i)
    """
    zeros = np.zeros_like(global_params)
    c_global = zeros if c_global is None else c_global
    c_local = zeros if c_local is None else c_local
    if c_global.shape != global_params.shape or c_local.shape != global_params.shape:
        raise ConfigurationError("control variates must match the parameter vector length")
    correction = c_global - c_local
    corrected = bool(np.any(correction))

    def direction(theta: np.ndarray, indices: np.ndarray, batch: Batch) -> np.ndarray:
        g = grad_params(spec, theta, batch)
        return g + correction if corrected else g

    try:
        theta, steps = run_local_sgd(spec, global_params, shard, cfg, rng, direction, dp_rng=dp_rng)
    except NumericError as e:
        return flagged_update(client_id, global_params, shard, str(e))

    c_new = c_local - c_global + (global_params - theta) / (steps * cfg.learning_rate)
    return ClientUpdate(
        client_id=client_id,
        trained_params=theta,
        n_examples=len(shard),
        n_steps=steps,
        extras={"control_variate": c_new, "delta_c": c_new - c_local},
    )


def update_server_control(c_global: np.ndarray, deltas: list[np.ndarray], n_clients: int) -> np.ndarray:
    """c <- c + (1/N) * sum of delta_c, i.e. (K/N) * mean(delta_c)."""
    if not deltas:
        return c_global
    return c_global + np.sum(deltas, axis=0) / n_clients
