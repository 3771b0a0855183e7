import numpy as np

from src.algorithms.base import flagged_update, run_local_sgd
from src.config import LocalTrainConfig
from src.data.models import Batch, ClientUpdate, Dataset, ModelSpec
from src.nn.dense import grad_params
from src.utils.errors import NumericError


def local_train_fedprox(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: Dataset,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    dp_rng: np.random.Generator | None = None,
) -> ClientUpdate:
    """FedAvg whose step gradient carries the proximal term mu * (theta - theta^(t-1))."""
    mu = cfg.mu

    def direction(theta: np.ndarray, indices: np.ndarray, batch: Batch) -> np.ndarray:
        g = grad_params(spec, theta, batch)
        if mu == 0:
            return g
        return g + mu * (theta - global_params)

    try:
        theta, steps = run_local_sgd(spec, global_params, shard, cfg, rng, direction, dp_rng=dp_rng)
    except NumericError as e:
        return flagged_update(client_id, global_params, shard, str(e))
    return ClientUpdate(client_id=client_id, trained_params=theta, n_examples=len(shard), n_steps=steps)
