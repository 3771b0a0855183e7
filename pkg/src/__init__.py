"""Federated learning simulator: FedReg, its baselines, forgetting diagnostics and gradient inversion."""

__version__ = "0.1.0"
