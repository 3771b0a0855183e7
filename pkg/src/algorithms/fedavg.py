import numpy as np

from src.algorithms.base import flagged_update, plain_direction, run_local_sgd
from src.config import LocalTrainConfig
from src.data.models import ClientUpdate, Dataset, ModelSpec
from src.utils.errors import NumericError


def local_train_fedavg(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: Dataset,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    dp_rng: np.random.Generator | None = None,
) -> ClientUpdate:
    """S epochs of minibatch gradient descent on the shard, starting from the global params."""
    try:
        theta, steps = run_local_sgd(spec, global_params, shard, cfg, rng, plain_direction(spec), dp_rng=dp_rng)
    except NumericError as e:
        return flagged_update(client_id, global_params, shard, str(e))
    return ClientUpdate(client_id=client_id, trained_params=theta, n_examples=len(shard), n_steps=steps)


def local_train_sgd(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: Dataset,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    dp_rng: np.random.Generator | None = None,
) -> ClientUpdate:
    """FedAvg with a single full-shard gradient step."""
    one_step = cfg.model_copy(update={"epochs": 1, "full_batch": True})
    return local_train_fedavg(spec, global_params, shard, one_step, rng, client_id=client_id, dp_rng=dp_rng)
