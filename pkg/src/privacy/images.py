import os

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str, image: np.ndarray) -> str:
    """Save an H x W image with values in [0, 1] as binary greyscale PGM."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PPM")
    return path


def image_grid(rows: list[list[np.ndarray]], padding: int = 1) -> np.ndarray:
    """Tile equally sized images row by row with a white border."""
    h, w = rows[0][0].shape
    n_cols = max(len(row) for row in rows)
    grid = np.ones((len(rows) * (h + padding) + padding, n_cols * (w + padding) + padding))
    for r, row in enumerate(rows):
        for c, image in enumerate(row):
            top, left = padding + r * (h + padding), padding + c * (w + padding)
            grid[top : top + h, left : left + w] = image
    return grid


def write_recon_grid(path: str, truths: list[np.ndarray], reconstructions: list[np.ndarray]) -> str:
    """Ground-truth row above reconstruction row."""
    return write_pgm(path, image_grid([truths, reconstructions]))
