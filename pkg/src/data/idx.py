"""Reader for the IDX files MNIST and EMNIST ship in (optionally gzip-compressed)."""

import gzip
import os

import numpy as np

from src.data.models import Dataset
from src.utils.errors import IngestionError
from src.utils.logging import data_logger

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_bytes(path: str) -> bytes:
    if not os.path.exists(path):
        raise IngestionError("file not found", offset=0, path=path)
    opener = gzip.open if path.endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except (OSError, EOFError) as e:
        raise IngestionError(f"could not read file: {e}", offset=0, path=path) from e


def _parse(raw: bytes, expected_magic: int, path: str) -> tuple[tuple[int, ...], np.ndarray]:
    """Header dims and the raw ubyte payload of one IDX file."""
    if len(raw) < 4:
        raise IngestionError("file shorter than the magic number", offset=len(raw), path=path)
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise IngestionError(f"bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0, path=path)
    n_dims = magic & 0xFF
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise IngestionError("truncated header", offset=len(raw), path=path)
    dims = tuple(int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(n_dims))
    n_bytes = int(np.prod(dims))
    available = len(raw) - header_len
    if available < n_bytes:
        raise IngestionError(f"truncated payload: expected {n_bytes} bytes, found {available}", offset=len(raw), path=path)
    payload = np.frombuffer(raw, dtype=np.uint8, count=n_bytes, offset=header_len)
    return dims, payload


def load_idx(images_path: str, labels_path: str, n_classes: int | None = None, limit: int | None = None) -> Dataset:
    """Load an image/label IDX pair as a Dataset.

    Args:
        images_path: IDX3 image file (magic 0x00000803), ``.gz`` accepted
        labels_path: IDX1 label file (magic 0x00000801), ``.gz`` accepted
        n_classes: Number of classes; inferred as max label + 1 when omitted
        limit: Keep only the first ``limit`` examples

    Returns:
        Dataset with pixel bytes scaled by 1/255 and rows flattened
    """
    image_dims, pixels = _parse(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    label_dims, labels = _parse(_read_bytes(labels_path), LABEL_MAGIC, labels_path)

    n_images, n_labels = image_dims[0], label_dims[0]
    if n_images != n_labels:
        raise IngestionError(f"label count {n_labels} does not match image count {n_images}", offset=4, path=labels_path)
    if n_images == 0:
        raise IngestionError("file declares zero examples", offset=4, path=images_path)

    features = pixels.reshape(n_images, -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if limit is not None:
        features, labels = features[:limit], labels[:limit]

    if n_classes is None:
        n_classes = max(int(labels.max()) + 1, 2)
    elif labels.max() >= n_classes:
        raise IngestionError(f"label {int(labels.max())} exceeds n_classes={n_classes}", offset=8, path=labels_path)

    data_logger.info(f"Loaded {features.shape[0]} examples of dim {features.shape[1]} from {os.path.basename(images_path)}")
    return Dataset(features=features, labels=labels, n_classes=n_classes)
