"""Reconstruction quality scores and the distances used by gradient inversion."""

import numpy as np

from src.nn.vector import vec_dot, vec_norm
from src.utils.errors import ConfigurationError

# Reported in place of +inf when two images are identical
PSNR_CAP_DB = 99.0


def total_variation(x: np.ndarray) -> float:
    """Anisotropic TV: sum of absolute vertical and horizontal neighbour differences."""
    if x.ndim != 2:
        raise ConfigurationError(f"total_variation expects an H x W image, got shape {x.shape}")
    return float(np.abs(np.diff(x, axis=0)).sum() + np.abs(np.diff(x, axis=1)).sum())


def total_variation_grad(x: np.ndarray) -> np.ndarray:
    """A subgradient of total_variation (sign(0) = 0)."""
    grad = np.zeros_like(x)
    dv = np.sign(np.diff(x, axis=0))
    dh = np.sign(np.diff(x, axis=1))
    grad[1:, :] += dv
    grad[:-1, :] -= dv
    grad[:, 1:] += dh
    grad[:, :-1] -= dh
    return grad


def psnr(x: np.ndarray, x_ref: np.ndarray, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    if x.shape != x_ref.shape:
        raise ConfigurationError(f"psnr needs equal shapes, got {x.shape} and {x_ref.shape}")
    mse = float(np.mean((x - x_ref) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(max_value**2 / mse))


def capped_psnr(value: float) -> float:
    return min(value, PSNR_CAP_DB)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b); defined as 1 when either vector has zero norm."""
    na, nb = vec_norm(a), vec_norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return 1.0 - vec_dot(a, b) / (na * nb)


def cosine_distance_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d cosine_distance(a, b) / d b (zero where the distance is pinned to 1)."""
    na, nb = vec_norm(a), vec_norm(b)
    if na == 0 or nb == 0:
        return np.zeros_like(b)
    return -a / (na * nb) + (vec_dot(a, b) / (na * nb**3)) * b


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance."""
    return float(np.sum((a - b) ** 2))


def l2_distance_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * (b - a)


DISTANCES = {
    "cosine": (cosine_distance, cosine_distance_grad),
    "l2": (l2_distance, l2_distance_grad),
}


def get_distance(name: str):
    if name not in DISTANCES:
        raise ConfigurationError(f"unknown distance {name!r}, choose from {sorted(DISTANCES)}")
    return DISTANCES[name]
