"""Hyperparameter presets for the benchmark settings.

Each preset is a partial ExperimentConfig dict. A config file selects one with a
top-level ``preset = "<name>"`` key; keys written in the file override the preset.
"""

BENCHMARK_PRESETS = {
    "mnist_one_class": {
        "rounds": 500,
        "clients_per_round": 10,
        "partition": {"scheme": "power_law_one_class", "n_clients": 5000},
        "train": {
            "epochs": 20,
            "batch_size": 10,
            "learning_rate": 0.1,
            "mu": 0.01,
            "lam": 1e-4,
            "fedreg": {"gamma": 0.3, "eta_s": 0.2},
        },
    },
    "mnist_two_class": {
        "rounds": 500,
        "clients_per_round": 10,
        "partition": {"scheme": "two_class", "n_clients": 5000},
        "train": {
            "epochs": 40,
            "batch_size": 10,
            "learning_rate": 0.1,
            "mu": 0.001,
            "lam": 1e-4,
            "fedreg": {"gamma": 0.4, "eta_s": 0.2},
        },
    },
    "emnist": {
        "rounds": 500,
        "clients_per_round": 20,
        "partition": {"scheme": "one_class", "n_clients": 10000, "client_size": 24},
        "train": {
            "epochs": 20,
            "batch_size": 24,
            "learning_rate": 0.2,
            "mu": 0.001,
            "lam": 1e-4,
            "fedreg": {"gamma": 0.4, "eta_s": 0.05},
        },
        "attack": {
            "step_size": 1.0,
            "distance": "l2",
            "tv_weight": 1e-8,
            "mg_eta_s": 0.03,
            "dp": {"clip_bound": 1.0, "noise_scale": 0.01},
        },
    },
    # Desk-scale forgetting setup: 2-class blobs over 10 one-class clients
    "blobs_forgetting": {
        "rounds": 20,
        "clients_per_round": 2,
        "dataset": {"source": "synthetic", "synthetic": {"n_classes": 2, "dim": 2, "per_class": 100, "spread": 0.1}},
        "partition": {"scheme": "one_class", "n_clients": 10},
        "model": {"hidden_dims": [16]},
        "train": {"epochs": 5, "batch_size": 5, "learning_rate": 0.1, "fedreg": {"gamma": 0.5, "eta_s": 0.05}},
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    """Recursively merge override into a copy of base; override wins on leaves."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged
