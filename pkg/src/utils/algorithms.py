"""Constants and utilities related to local-training algorithm configuration."""

from src.algorithms.fedavg import local_train_fedavg, local_train_sgd
from src.algorithms.fedcurv import local_train_fedcurv
from src.algorithms.fedprox import local_train_fedprox
from src.algorithms.fedreg import local_train_fedreg
from src.algorithms.scaffold import local_train_scaffold
from src.utils.errors import ConfigurationError

# Define algorithm configuration - single source of truth
ALGORITHM_CONFIG = {
    "sgd": {
        "display_name": "SGD",
        "train_func": local_train_sgd,
        "order": 0,
        "server_state": None,
    },
    "fedavg": {
        "display_name": "FedAvg",
        "train_func": local_train_fedavg,
        "order": 1,
        "server_state": None,
    },
    "fedprox": {
        "display_name": "FedProx",
        "train_func": local_train_fedprox,
        "order": 2,
        "server_state": None,
    },
    "fedcurv": {
        "display_name": "FedCurv",
        "train_func": local_train_fedcurv,
        "order": 3,
        "server_state": "fisher",
    },
    "scaffold": {
        "display_name": "SCAFFOLD",
        "train_func": local_train_scaffold,
        "order": 4,
        "server_state": "control_variate",
    },
    "fedreg": {
        "display_name": "FedReg",
        "train_func": local_train_fedreg,
        "order": 5,
        "server_state": None,
    },
}

ALGORITHM_ORDER = [(config["display_name"], key) for key, config in sorted(ALGORITHM_CONFIG.items(), key=lambda x: x[1]["order"])]


def get_algorithm(name: str) -> dict:
    """Registry entry for an algorithm key."""
    if name not in ALGORITHM_CONFIG:
        raise ConfigurationError(f"unknown algorithm {name!r}, choose from {[key for _, key in ALGORITHM_ORDER]}")
    return ALGORITHM_CONFIG[name]
