"""Empirical Fisher information and correlation between Fisher diagonals."""

import warnings

import numpy as np
from scipy.stats import pearsonr

from src.data.models import Batch, Dataset, ModelSpec
from src.nn.dense import param_layout, per_example_sq_grad_mean
from src.utils.errors import ConfigurationError
from src.utils.logging import diagnostics_logger

# Coordinates where both diagonals fall below this are left out of the correlation
FISHER_FLOOR = 1e-15


def empirical_fisher(spec: ModelSpec, params: np.ndarray, data: Batch | Dataset) -> np.ndarray:
    """Diagonal empirical Fisher: mean squared gradient of y . log p.

    Soft targets (pseudo data) are used as given, not hardened to argmax.
    """
    batch = data.batch() if isinstance(data, Dataset) else data
    if len(batch) == 0:
        raise ConfigurationError("empirical_fisher needs a non-empty dataset")
    return per_example_sq_grad_mean(spec, params, batch)


def fisher_correlation(f_a: np.ndarray, f_b: np.ndarray) -> float:
    """Pearson correlation of two Fisher diagonals.

    Returns:
        rho in [-1, 1], or NaN when fewer than 2 informative coordinates remain or
        either side has zero variance
    """
    if f_a.shape != f_b.shape:
        raise ConfigurationError(f"Fisher vectors differ in length: {f_a.shape} vs {f_b.shape}")
    keep = (np.abs(f_a) >= FISHER_FLOOR) | (np.abs(f_b) >= FISHER_FLOOR)
    a, b = f_a[keep], f_b[keep]
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        diagnostics_logger.debug(f"Fisher correlation undefined: {a.size} informative coordinates")
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = pearsonr(a, b).statistic
    return float(np.clip(rho, -1.0, 1.0))


def layer_fisher_correlations(spec: ModelSpec, f_a: np.ndarray, f_b: np.ndarray) -> list[float]:
    """fisher_correlation per weight matrix and bias vector, in layout order."""
    return [fisher_correlation(f_a[item.index], f_b[item.index]) for item in param_layout(spec)]
