import threading
from collections import deque
from typing import Any

import numpy as np


class ClientStateCache:
    """Server-side per-client state that outlives a round.

    Holds SCAFFOLD client control variates, the latest FedCurv Fisher terms each
    client sent (stamped with the round), and the sampled clients of the last
    ``history_rounds`` rounds. Later writes for the same client replace earlier ones.
    """

    def __init__(self, history_rounds: int = 10):
        self._control_variates: dict[int, np.ndarray] = {}
        self._fisher_terms: dict[int, dict[str, Any]] = {}
        self._round_history: deque[tuple[int, list[int]]] = deque(maxlen=max(1, history_rounds))
        self._lock = threading.Lock()

    def get_control_variate(self, client_id: int) -> np.ndarray | None:
        """Get a client's control variate if it has one."""
        return self._control_variates.get(client_id)

    def set_control_variate(self, client_id: int, value: np.ndarray):
        with self._lock:
            self._control_variates[client_id] = value

    def set_fisher_terms(self, client_id: int, round_index: int, fisher: np.ndarray, fisher_weighted_params: np.ndarray):
        with self._lock:
            self._fisher_terms[client_id] = {"round": round_index, "fisher": fisher, "fisher_weighted_params": fisher_weighted_params}

    def fisher_clients(self) -> list[int]:
        return sorted(self._fisher_terms)

    def aggregate_fisher(self, exclude_client: int) -> tuple[np.ndarray, np.ndarray, dict[int, int]] | None:
        """Sum of Fisher diagonals and Fisher-weighted params over all other clients.

        Returns:
            (F_agg, U_agg, {client_id: round sent}) or None when no other client has reported
        """
        others = [cid for cid in self.fisher_clients() if cid != exclude_client]
        if not others:
            return None
        fisher_sum = np.zeros_like(self._fisher_terms[others[0]]["fisher"])
        weighted_sum = np.zeros_like(fisher_sum)
        for cid in others:
            fisher_sum += self._fisher_terms[cid]["fisher"]
            weighted_sum += self._fisher_terms[cid]["fisher_weighted_params"]
        return fisher_sum, weighted_sum, {cid: self._fisher_terms[cid]["round"] for cid in others}

    def record_round(self, round_index: int, sampled_clients: list[int]):
        """Remember the clients sampled in a round. Rounds arrive in increasing order."""
        entry = (round_index, sorted(sampled_clients))
        with self._lock:
            if self._round_history and self._round_history[-1][0] == round_index:
                self._round_history[-1] = entry
            else:
                self._round_history.append(entry)

    def get_round_clients(self, round_index: int) -> list[int] | None:
        for recorded, clients in self._round_history:
            if recorded == round_index:
                return clients
        return None

    def clients_in_window(self, first_round: int, last_round: int) -> list[int]:
        """Union of clients sampled in rounds [first_round, last_round] still held."""
        clients = set()
        for recorded, clients_of_round in self._round_history:
            if first_round <= recorded <= last_round:
                clients.update(clients_of_round)
        return sorted(clients)
