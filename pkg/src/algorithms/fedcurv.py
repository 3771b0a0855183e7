import numpy as np

from src.algorithms.base import flagged_update, run_local_sgd
from src.config import LocalTrainConfig
from src.data.models import Batch, ClientUpdate, Dataset, ModelSpec
from src.diagnostics.fisher import empirical_fisher
from src.nn.dense import grad_params
from src.utils.errors import NumericError


def curvature_penalty_grad(theta: np.ndarray, lam: float, fisher_sum: np.ndarray, weighted_sum: np.ndarray) -> np.ndarray:
    """Gradient of lam * sum_j F_j . (theta - theta_j)^2 over the other clients j.

    With F_agg = sum F_j and U_agg = sum F_j * theta_j this is 2 lam (F_agg * theta - U_agg).
    """
    return 2.0 * lam * (fisher_sum * theta - weighted_sum)


def local_train_fedcurv(
    spec: ModelSpec,
    global_params: np.ndarray,
    shard: Dataset,
    cfg: LocalTrainConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    dp_rng: np.random.Generator | None = None,
    fisher_state: tuple[np.ndarray, np.ndarray] | None = None,
) -> ClientUpdate:
    """Elastic-weight-consolidation local training.

    Args:
        fisher_state: (F_agg, U_agg) summed over the latest Fisher terms the server holds
            for the other clients; None before any client has reported

    Returns:
        ClientUpdate whose extras carry this client's Fisher diagonal at its trained
        params ("fisher") and the Fisher-weighted params ("fisher_weighted_params")
    """
    lam = cfg.lam

    def direction(theta: np.ndarray, indices: np.ndarray, batch: Batch) -> np.ndarray:
        g = grad_params(spec, theta, batch)
        if lam == 0 or fisher_state is None:
            return g
        return g + curvature_penalty_grad(theta, lam, *fisher_state)

    try:
        theta, steps = run_local_sgd(spec, global_params, shard, cfg, rng, direction, dp_rng=dp_rng)
        fisher = empirical_fisher(spec, theta, shard)
    except NumericError as e:
        return flagged_update(client_id, global_params, shard, str(e))
    return ClientUpdate(
        client_id=client_id,
        trained_params=theta,
        n_examples=len(shard),
        n_steps=steps,
        extras={"fisher": fisher, "fisher_weighted_params": fisher * theta},
    )
