"""DPSGD mechanism: clip a gradient to norm C, then add Gaussian noise."""

import numpy as np

from src.config import DpConfig
from src.nn.vector import vec_dot, vec_norm


def clip_gradient(g: np.ndarray, clip_bound: float) -> np.ndarray:
    """Scale g by min(1, C/||g||); the result never exceeds C in floating point."""
    norm = vec_norm(g)
    if norm <= clip_bound:
        return g.copy()
    factor = clip_bound / norm
    clipped = g * factor
    while vec_norm(clipped) > clip_bound:
        factor = np.nextafter(factor, 0.0)
        clipped = g * factor
    return clipped


def clip_and_noise(g: np.ndarray, dp: DpConfig, rng: np.random.Generator) -> np.ndarray:
    """Clipped gradient plus i.i.d. N(0, (sigma*C)^2) noise per coordinate."""
    clipped = clip_gradient(g, dp.clip_bound)
    if dp.noise_scale == 0:
        return clipped
    return clipped + rng.normal(0.0, dp.noise_scale * dp.clip_bound, size=g.shape)


def clip_vjp(g: np.ndarray, clip_bound: float, u: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of clip_gradient at g with cotangent u."""
    norm = vec_norm(g)
    if norm <= clip_bound:
        return u.copy()
    unit = g / norm
    return (clip_bound / norm) * (u - unit * vec_dot(unit, u))
