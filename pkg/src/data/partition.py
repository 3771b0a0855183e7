"""Non-i.i.d. client partition schemes."""

import numpy as np

from src.data.models import ClientPartition, Dataset, PartitionParams, PartitionScheme
from src.utils.errors import ConfigurationError
from src.utils.logging import log_dropped_examples
from src.utils.seeding import PARTITION, derive_rng


def _class_pools(dataset: Dataset, rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Shuffled example indices of every class present in the dataset."""
    return {int(k): rng.permutation(np.flatnonzero(dataset.labels == k)) for k in np.unique(dataset.labels)}


def _one_class_owners(classes: list[int], n_clients: int) -> dict[int, list[int]]:
    owners: dict[int, list[int]] = {k: [] for k in classes}
    for cid in range(n_clients):
        owners[classes[cid % len(classes)]].append(cid)
    return owners


def _split_one_class(pools: dict[int, np.ndarray], n_clients: int, client_size: int | None = None) -> list[np.ndarray]:
    """Equal single-class shards; exactly client_size examples each when given."""
    assignments: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * n_clients
    for k, clients in _one_class_owners(sorted(pools), n_clients).items():
        if not clients:
            continue
        chunk = len(pools[k]) // len(clients) if client_size is None else client_size
        if chunk == 0 or chunk * len(clients) > len(pools[k]):
            raise ConfigurationError(f"class {k} has {len(pools[k])} examples for {len(clients)} clients" + (f" of size {client_size}" if client_size else ""))
        for j, cid in enumerate(clients):
            assignments[cid] = pools[k][j * chunk : (j + 1) * chunk]
    return assignments


def _split_two_class(pools: dict[int, np.ndarray], n_clients: int) -> list[np.ndarray]:
    classes = sorted(pools)
    n = len(classes)
    if n < 2:
        raise ConfigurationError("two_class partition needs at least 2 classes in the dataset")
    wanted = []
    for cid in range(n_clients):
        first = cid % n
        second = (first + 1 + (cid // n) % (n - 1)) % n
        wanted.append((classes[first], classes[second]))

    demand = {k: sum(pair.count(k) for pair in wanted) for k in classes}
    cursor = {k: 0 for k in classes}
    assignments = []
    for cid, pair in enumerate(wanted):
        parts = []
        for k in pair:
            chunk = len(pools[k]) // demand[k]
            if chunk == 0:
                raise ConfigurationError(f"class {k} has {len(pools[k])} examples for {demand[k]} client shards")
            parts.append(pools[k][cursor[k] : cursor[k] + chunk])
            cursor[k] += chunk
        assignments.append(np.concatenate(parts))
    return assignments


def _split_power_law(pools: dict[int, np.ndarray], n_clients: int, params: PartitionParams, rng: np.random.Generator) -> list[np.ndarray]:
    weights = rng.pareto(params.power_law_exponent, size=n_clients) + 1.0
    assignments: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * n_clients
    for k, clients in _one_class_owners(sorted(pools), n_clients).items():
        if not clients:
            continue
        pool = pools[k]
        spare = len(pool) - params.min_client_size * len(clients)
        if spare < 0:
            raise ConfigurationError(f"class {k} has {len(pool)} examples, fewer than {len(clients)} clients x min size {params.min_client_size}")
        w = weights[clients]
        sizes = params.min_client_size + np.floor(spare * w / w.sum()).astype(np.int64)
        start = 0
        for cid, size in zip(clients, sizes):
            assignments[cid] = pool[start : start + size]
            start += size
    return assignments


def partition(dataset: Dataset, scheme: PartitionScheme | str, n_clients: int, seed: int, params: PartitionParams | None = None) -> ClientPartition:
    """Split a dataset across clients.

    Args:
        dataset: Examples to distribute
        scheme: one_class, two_class, uniform_random or power_law_one_class
        n_clients: Number of clients (>= 1)
        seed: Master seed; the partition uses its own derived stream
        params: Power-law exponent, minimum client size and fixed one_class shard size

    Returns:
        ClientPartition whose index lists are disjoint and non-empty. Examples that
        would break a scheme's class constraint are left out and logged.
    """
    scheme = PartitionScheme(scheme)
    params = params or PartitionParams()
    n = len(dataset)
    if n_clients < 1:
        raise ConfigurationError(f"n_clients must be >= 1, got {n_clients}")
    if n_clients > n:
        raise ConfigurationError(f"{n_clients} clients but only {n} examples")

    rng = derive_rng(seed, PARTITION)
    if n_clients == 1:
        assignments = [np.arange(n, dtype=np.int64)]
    elif scheme == PartitionScheme.UNIFORM_RANDOM:
        assignments = np.array_split(rng.permutation(n), n_clients)
    else:
        pools = _class_pools(dataset, rng)
        if scheme == PartitionScheme.ONE_CLASS:
            assignments = _split_one_class(pools, n_clients, params.client_size)
        elif scheme == PartitionScheme.TWO_CLASS:
            assignments = _split_two_class(pools, n_clients)
        else:
            assignments = _split_power_law(pools, n_clients, params, rng)

    result = ClientPartition(assignments=assignments, scheme=scheme)
    log_dropped_examples(scheme.value, n - sum(result.sizes()), n)
    return result
