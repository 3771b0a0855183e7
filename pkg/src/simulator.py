import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from colorama import Fore, Style, init  # noqa: E402

from src.algorithms.fedreg import gen_pseudo  # noqa: E402
from src.algorithms.scaffold import update_server_control  # noqa: E402
from src.config import AlgorithmName, ExperimentConfig  # noqa: E402
from src.data.cache import ClientStateCache  # noqa: E402
from src.data.idx import load_idx  # noqa: E402
from src.data.models import ClientPartition, ClientUpdate, Dataset, ModelSpec, RoundRecord, ServerState  # noqa: E402
from src.data.partition import partition  # noqa: E402
from src.data.synthetic import synth_blobs, train_test_split  # noqa: E402
from src.diagnostics.fisher import empirical_fisher, fisher_correlation, layer_fisher_correlations  # noqa: E402
from src.diagnostics.forgetting import forgetting_increment, loss_curr, loss_prev  # noqa: E402
from src.diagnostics.summary import summarize_run  # noqa: E402
from src.nn.dense import accuracy, init_params  # noqa: E402
from src.nn.vector import all_finite  # noqa: E402
from src.utils.algorithms import get_algorithm  # noqa: E402
from src.utils.errors import ConfigurationError, NumericError  # noqa: E402
from src.utils.logging import fl_logger, log_fisher_staleness, log_flagged_client  # noqa: E402
from src.utils.progress import RoundProgress  # noqa: E402
from src.utils.seeding import DP, INIT, SAMPLE, SHUFFLE, derive_rng  # noqa: E402

init(autoreset=True)


def sample_clients(all_clients: list[int], k: int, rng: np.random.Generator) -> list[int]:
    """Uniform sample of k clients without replacement, returned in id order."""
    if k > len(all_clients):
        raise ConfigurationError(f"cannot sample {k} clients out of {len(all_clients)}")
    chosen = rng.choice(len(all_clients), size=k, replace=False)
    return sorted(all_clients[i] for i in chosen)


def aggregate_average(updates: list[ClientUpdate], weighted: bool = False) -> np.ndarray:
    """Coordinate-wise mean of the trained params, reduced in client-id order.

    Args:
        updates: Non-empty list of client updates
        weighted: Weight each client by its shard size instead of 1/K

    Returns:
        Aggregated parameter vector
    """
    if not updates:
        raise ConfigurationError("cannot aggregate an empty update list")
    ordered = sorted(updates, key=lambda u: u.client_id)
    lengths = {u.trained_params.shape for u in ordered}
    if len(lengths) != 1:
        raise ConfigurationError(f"updates differ in length: {sorted(lengths)}")
    stacked = np.stack([u.trained_params for u in ordered])
    if weighted:
        return np.average(stacked, axis=0, weights=[u.n_examples for u in ordered])
    return np.mean(stacked, axis=0)


def load_experiment_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Training and test sets described by the config's dataset section."""
    ds = config.dataset
    if ds.source == "synthetic":
        syn = ds.synthetic
        full = synth_blobs(syn.n_classes, syn.dim, syn.per_class, syn.spread, config.seed)
        return train_test_split(full, ds.test_fraction, config.seed)

    train = load_idx(ds.images_path, ds.labels_path, n_classes=ds.n_classes, limit=ds.limit)
    if ds.test_images_path:
        test = load_idx(ds.test_images_path, ds.test_labels_path, n_classes=train.n_classes, limit=ds.test_limit)
        return train, test
    return train_test_split(train, ds.test_fraction, config.seed)


class FederatedSimulator:
    def __init__(
        self,
        config: ExperimentConfig,
        train: Dataset,
        test: Dataset,
        client_partition: ClientPartition | None = None,
        workers: int = 1,
        progress: RoundProgress | None = None,
        on_round: Callable[[RoundRecord], None] | None = None,
    ):
        """
        :param config: Validated experiment configuration.
        :param train: Training data split across clients.
        :param test: Held-out data for per-round accuracy.
        :param client_partition: Precomputed partition; built from the config when omitted.
        :param workers: Number of threads training clients in parallel.
        :param progress: Optional live status display.
        :param on_round: Called with every RoundRecord as soon as it exists.
        """
        self.config = config
        self.train = train
        self.test = test
        self.workers = max(1, workers)
        self.progress = progress
        self.on_round = on_round
        self.algorithm = config.train.algorithm.value
        self.algorithm_entry = get_algorithm(self.algorithm)
        self.paired_entry = None
        if config.paired_reference is not None:
            self.paired_entry = get_algorithm(config.paired_reference.value)
            if self.paired_entry["server_state"] is not None:
                raise ConfigurationError(f"paired_reference must keep no server state, got {config.paired_reference.value!r}")

        if train.n_classes != test.n_classes:
            raise ConfigurationError("train and test sets disagree on the number of classes")
        self.spec = ModelSpec(layer_dims=[train.dim, *config.model.hidden_dims, train.n_classes])
        self.partition = client_partition or partition(train, config.partition.scheme, config.partition.n_clients, config.seed, config.partition.to_params())
        self.partition.validate_against(len(train))
        self.shards = [train.subset(idx) for idx in self.partition.assignments]
        if config.clients_per_round > len(self.shards):
            raise ConfigurationError(f"clients_per_round={config.clients_per_round} exceeds {len(self.shards)} clients")

        self.state = ServerState(global_params=init_params(self.spec, derive_rng(config.seed, INIT)))
        if self.algorithm == AlgorithmName.SCAFFOLD.value:
            self.state.control_variate = np.zeros_like(self.state.global_params)
        self.cache = ClientStateCache(history_rounds=config.fisher_window)
        self.records: list[RoundRecord] = []

    @classmethod
    def from_config(cls, config: ExperimentConfig, **kwargs) -> "FederatedSimulator":
        train, test = load_experiment_data(config)
        return cls(config, train, test, **kwargs)

    @property
    def global_params(self) -> np.ndarray:
        return self.state.global_params

    def evaluate(self, params: np.ndarray | None = None) -> float:
        """Test accuracy of params (the global params by default)."""
        return accuracy(self.spec, self.state.global_params if params is None else params, self.test)

    def _client_kwargs(self, client_id: int, round_index: int) -> dict:
        """Server-side state a client needs, read before the round's workers start."""
        kind = self.algorithm_entry["server_state"]
        if kind == "control_variate":
            return {"c_global": self.state.control_variate, "c_local": self.cache.get_control_variate(client_id)}
        if kind == "fisher":
            aggregated = self.cache.aggregate_fisher(exclude_client=client_id)
            if aggregated is None:
                return {"fisher_state": None}
            fisher_sum, weighted_sum, sent = aggregated
            log_fisher_staleness(client_id, round_index, {cid: round_index - r for cid, r in sent.items()})
            return {"fisher_state": (fisher_sum, weighted_sum)}
        return {}

    def _train_client(self, client_id: int, round_index: int, global_params: np.ndarray, kwargs: dict, entry: dict | None = None) -> ClientUpdate:
        """Local training of one client. ``entry`` swaps in another algorithm, without progress display."""
        show = self.progress is not None and entry is None
        entry = entry or self.algorithm_entry
        if show:
            self.progress.update_status(client_id, "training")
        update = entry["train_func"](
            self.spec,
            global_params,
            self.shards[client_id],
            self.config.train,
            derive_rng(self.config.seed, SHUFFLE, round_index, client_id),
            client_id=client_id,
            dp_rng=derive_rng(self.config.seed, DP, round_index, client_id),
            **kwargs,
        )
        if show:
            self.progress.update_status(client_id, "flagged" if update.flagged else "done", f"{update.n_steps} steps")
        return update

    def _apply_server_state(self, round_index: int, updates: list[ClientUpdate]):
        kind = self.algorithm_entry["server_state"]
        if kind == "control_variate":
            deltas = [u.extras["delta_c"] for u in updates]
            self.state.control_variate = update_server_control(self.state.control_variate, deltas, len(self.shards))
            for u in updates:
                self.cache.set_control_variate(u.client_id, u.extras["control_variate"])
        elif kind == "fisher":
            for u in updates:
                self.cache.set_fisher_terms(u.client_id, round_index, u.extras["fisher"], u.extras["fisher_weighted_params"])

    def _forgetting(self, round_index: int, prev_params: np.ndarray, updates: list[ClientUpdate]) -> tuple[dict, dict]:
        """loss^(t-1) and loss^(t) on the data of the clients sampled in the previous round."""
        previous = self.cache.get_round_clients(round_index - 1)
        if not previous or not updates:
            return {}, {}
        trained = [u.trained_params for u in updates]
        before = {j: loss_prev(self.spec, prev_params, self.shards[j]) for j in previous}
        after = {j: loss_curr(self.spec, trained, self.shards[j]) for j in previous}
        return before, after

    def _paired_loss_curr(self, round_index: int, prev_params: np.ndarray, sampled: list[int], pool: ThreadPoolExecutor | None) -> dict:
        """loss^(t) of the reference algorithm trained by the same clients from theta^(t-1).

        Reference updates share the round's shuffle and noise streams and are never aggregated.
        """
        previous = self.cache.get_round_clients(round_index - 1)
        if not previous:
            return {}
        if pool is not None and self.workers > 1:
            futures = [pool.submit(self._train_client, cid, round_index, prev_params, {}, self.paired_entry) for cid in sampled]
            updates = [f.result() for f in futures]
        else:
            updates = [self._train_client(cid, round_index, prev_params, {}, self.paired_entry) for cid in sampled]
        trained = [u.trained_params for u in sorted(updates, key=lambda u: u.client_id) if not u.flagged]
        if not trained:
            return {}
        return {j: loss_curr(self.spec, trained, self.shards[j]) for j in previous}

    def _fisher_correlations(self, round_index: int, prev_params: np.ndarray, updates: list[ClientUpdate]) -> tuple[float | None, list[float | None]]:
        """Mean correlation between pseudo-data Fisher and recent-clients' data Fisher.

        Both diagonals are taken at each client's trained params; pseudo data is
        generated from theta^(t-1) whatever the algorithm.
        """
        first = max(1, round_index - self.config.fisher_window)
        window = self.cache.clients_in_window(first, round_index - 1)
        if not window or not updates:
            return None, []
        previous_data = Dataset.model_construct(
            features=np.concatenate([self.shards[j].features for j in window]),
            labels=np.concatenate([self.shards[j].labels for j in window]),
            n_classes=self.train.n_classes,
        )
        fedreg = self.config.train.fedreg
        whole, per_layer = [], []
        for u in updates:
            pseudo = gen_pseudo(self.spec, prev_params, self.shards[u.client_id].batch(), fedreg.eta_s, fedreg.fgsm_steps, fedreg.clip_inputs)
            f_pseudo = empirical_fisher(self.spec, u.trained_params, pseudo)
            f_previous = empirical_fisher(self.spec, u.trained_params, previous_data)
            whole.append(fisher_correlation(f_pseudo, f_previous))
            per_layer.append(layer_fisher_correlations(self.spec, f_pseudo, f_previous))

        def nan_mean(values) -> float | None:
            finite = [v for v in values if not math.isnan(v)]
            return float(np.mean(finite)) if finite else None

        layers = [nan_mean(column) for column in zip(*per_layer)]
        return nan_mean(whole), layers

    def run_round(self, round_index: int, pool: ThreadPoolExecutor | None = None) -> RoundRecord:
        prev_params = self.state.global_params
        sampled = sample_clients(list(range(len(self.shards))), self.config.clients_per_round, derive_rng(self.config.seed, SAMPLE, round_index))
        if self.progress:
            self.progress.new_round(round_index, sampled)

        kwargs = {cid: self._client_kwargs(cid, round_index) for cid in sampled}
        if pool is not None and self.workers > 1:
            futures = [pool.submit(self._train_client, cid, round_index, prev_params, kwargs[cid]) for cid in sampled]
            updates = [f.result() for f in futures]
        else:
            updates = [self._train_client(cid, round_index, prev_params, kwargs[cid]) for cid in sampled]
        updates.sort(key=lambda u: u.client_id)

        valid = []
        for u in updates:
            if u.flagged:
                log_flagged_client(u.client_id, round_index, "non-finite local training", {"reason": u.extras.get("reason")})
            else:
                valid.append(u)

        if valid:
            new_params = aggregate_average(valid, weighted=self.config.weighted_aggregation)
            if not all_finite(new_params):
                raise NumericError(f"aggregated parameters are not finite in round {round_index}")
            self._apply_server_state(round_index, valid)
        else:
            fl_logger.warning(f"Round {round_index}: every sampled client was flagged, keeping the global parameters")
            new_params = prev_params

        before, after = self._forgetting(round_index, prev_params, valid)
        paired = self._paired_loss_curr(round_index, prev_params, sampled, pool) if self.paired_entry is not None else {}
        rho, layer_rhos = (None, [])
        if self.config.fisher_diagnostics:
            rho, layer_rhos = self._fisher_correlations(round_index, prev_params, valid)

        self.state.global_params = new_params
        self.state.round_index = round_index
        self.cache.record_round(round_index, sampled)

        mean_prev = float(np.mean(list(before.values()))) if before else None
        mean_curr = float(np.mean(list(after.values()))) if after else None
        paired_curr = float(np.mean(list(paired.values()))) if paired else None
        record = RoundRecord(
            round=round_index,
            test_accuracy=self.evaluate(),
            sampled_clients=sampled,
            client_loss_prev=before,
            client_loss_curr=after,
            mean_loss_prev=mean_prev,
            mean_loss_curr=mean_curr,
            mean_increment=forgetting_increment(mean_curr, mean_prev) if before else None,
            paired_loss_curr=paired_curr,
            paired_increment=forgetting_increment(paired_curr, mean_prev) if paired and before else None,
            fisher_correlation=rho,
            fisher_layer_correlations=layer_rhos,
            flagged_clients=len(updates) - len(valid),
        )
        fl_logger.info(f"Round {round_index}: accuracy {record.test_accuracy:.4f}" + (f", forgetting increment {record.mean_increment:+.4f}" if record.mean_increment is not None else ""))
        return record

    def run_rounds(self, n_rounds: int | None = None) -> list[RoundRecord]:
        """Run T rounds (config.rounds by default) and return their records.

        Each record is handed to on_round as soon as it exists so a failing round
        still leaves the earlier ones behind.
        """
        n_rounds = self.config.rounds if n_rounds is None else n_rounds
        if n_rounds <= 0:
            return []
        if self.progress:
            self.progress.start()
        start = self.state.round_index + 1
        try:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                for round_index in range(start, start + n_rounds):
                    record = self.run_round(round_index, pool)
                    self.records.append(record)
                    if self.on_round:
                        self.on_round(record)
        finally:
            if self.progress:
                self.progress.stop()
        return list(self.records[-n_rounds:])

    def analyze_performance(self, plot_path: str | None = None) -> pd.DataFrame:
        """Creates a per-round DataFrame, prints summary stats, and optionally plots the curves."""
        if not self.records:
            print("No round data found. Please run the simulation first.")
            return pd.DataFrame()

        performance_df = pd.DataFrame([r.to_row() for r in self.records]).set_index("round")
        summary = summarize_run(self.records, self.config.reference_accuracy)

        print(f"\n{Fore.WHITE}{Style.BRIGHT}RUN SUMMARY ({self.algorithm_entry['display_name']}):{Style.RESET_ALL}")
        print(f"Final Accuracy: {Fore.GREEN}{summary['final_accuracy']:.4f}{Style.RESET_ALL}")
        print(f"Best Accuracy: {Fore.GREEN}{summary['best_accuracy']:.4f}{Style.RESET_ALL}")
        if summary["mean_increment"] is not None:
            color = Fore.RED if summary["mean_increment"] > 0 else Fore.GREEN
            print(f"Mean Forgetting Increment: {color}{summary['mean_increment']:+.4f}{Style.RESET_ALL}")
        if summary["flagged_updates"]:
            print(f"Flagged Updates: {Fore.RED}{summary['flagged_updates']}{Style.RESET_ALL}")

        if plot_path:
            fig, (ax_acc, ax_inc) = plt.subplots(2, 1, figsize=(12, 8), sharex=True)
            ax_acc.plot(performance_df.index, performance_df["accuracy"], color="blue")
            ax_acc.set_title("Test Accuracy")
            ax_acc.set_ylabel("Accuracy")
            ax_acc.grid(True)
            increments = performance_df["increment"].astype(float)
            ax_inc.plot(performance_df.index, increments, color="red")
            ax_inc.axhline(0.0, color="grey", linewidth=0.8)
            ax_inc.set_title("Mean Forgetting Increment")
            ax_inc.set_xlabel("Round")
            ax_inc.grid(True)
            fig.tight_layout()
            fig.savefig(plot_path)
            plt.close(fig)

        return performance_df
