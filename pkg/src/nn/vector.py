"""Flat parameter-vector helpers."""

import numpy as np

from src.utils.errors import ConfigurationError


def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"parameter vectors differ in length: {a.shape} vs {b.shape}")


def vec_dot(a: np.ndarray, b: np.ndarray) -> float:
    _check_lengths(a, b)
    return float(np.dot(a, b))


def vec_axpy(y: np.ndarray, alpha: float, x: np.ndarray) -> np.ndarray:
    """y + alpha * x as a new vector; alpha == 0 returns an exact copy of y."""
    _check_lengths(y, x)
    if alpha == 0:
        return y.copy()
    return y + alpha * x


def vec_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def all_finite(a: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(a)))


def mix_params(current: np.ndarray, anchor: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * current + (1 - alpha) * anchor, exact at both endpoints."""
    _check_lengths(current, anchor)
    if alpha == 1:
        return current.copy()
    if alpha == 0:
        return anchor.copy()
    return anchor + alpha * (current - anchor)
