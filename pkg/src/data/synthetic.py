import numpy as np

from src.data.models import Dataset
from src.utils.errors import ConfigurationError
from src.utils.seeding import SPLIT, derive_rng

LATTICE_LOW = 0.2
LATTICE_HIGH = 0.8


def blob_means(n_classes: int, dim: int) -> np.ndarray:
    """Class means on a regular lattice inside [0.2, 0.8]^dim.

    The lattice has m points per axis, m the smallest integer with m**dim >= n_classes;
    class k sits at the base-m digits of k (least significant digit on axis 0).
    """
    m = 2
    while m**dim < n_classes:
        m += 1
    ticks = np.linspace(LATTICE_LOW, LATTICE_HIGH, m)
    means = np.empty((n_classes, dim))
    for k in range(n_classes):
        rest = k
        for axis in range(dim):
            means[k, axis] = ticks[rest % m]
            rest //= m
    return means


def synth_blobs(n_classes: int, dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around lattice means, clipped to [0,1], class-major order."""
    if n_classes < 2:
        raise ConfigurationError("synth_blobs needs at least 2 classes")
    if dim < 1 or per_class < 1:
        raise ConfigurationError("dim and per_class must be >= 1")
    if spread <= 0:
        raise ConfigurationError("spread must be > 0")

    rng = np.random.default_rng(seed)
    means = blob_means(n_classes, dim)
    features = np.concatenate([rng.normal(means[k], spread, size=(per_class, dim)) for k in range(n_classes)])
    labels = np.repeat(np.arange(n_classes), per_class)
    return Dataset(features=np.clip(features, 0.0, 1.0), labels=labels, n_classes=n_classes)


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random split into (train, test); both sides keep at least one example."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    if n < 2:
        raise ConfigurationError("need at least 2 examples to split")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    order = derive_rng(seed, SPLIT).permutation(n)
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))
