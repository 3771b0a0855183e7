import logging
import os
import sys
from datetime import datetime
from typing import Any, Dict, Optional

# Configure basic logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

# Round loop and local training
fl_logger = logging.getLogger("fl")
fl_logger.setLevel(logging.INFO)

# Dataset ingestion and partitioning
data_logger = logging.getLogger("data")
data_logger.setLevel(logging.INFO)

# Gradient inversion attacks
attack_logger = logging.getLogger("attack")
attack_logger.setLevel(logging.INFO)

# Forgetting / Fisher measurements
diagnostics_logger = logging.getLogger("diagnostics")
diagnostics_logger.setLevel(logging.INFO)


def configure_logging(save_logs: bool = False, level: int = logging.INFO, log_dir: Optional[str] = None):
    """Configure logging settings

    Args:
        save_logs: Whether to save logs to file
        level: Level applied to the package loggers
        log_dir: Directory for log files (defaults to $FEDREG_LOG_DIR or "logs")
    """
    # Clear existing handlers
    logging.root.handlers.clear()
    console = logging.StreamHandler(sys.stdout)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.root.addHandler(console)

    for logger in (fl_logger, data_logger, attack_logger, diagnostics_logger):
        logger.setLevel(level)

    # Create logs directory and add file handler if saving logs
    if save_logs:
        log_dir = log_dir or os.environ.get("FEDREG_LOG_DIR", "logs")
        os.makedirs(log_dir, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_file = os.path.join(log_dir, f"fedreg_{timestamp}.log")

        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.root.addHandler(file_handler)


def log_flagged_client(client_id: int, round_index: int, reason: str, details: Optional[Dict[str, Any]] = None):
    """Log a client update that was excluded from aggregation

    Args:
        client_id: The client whose update diverged
        round_index: Round in which it happened
        reason: Short description of the failure
        details: Optional dictionary with additional details
    """
    details_str = f": {details}" if details else ""
    fl_logger.warning(f"Client {client_id} flagged in round {round_index} - {reason}{details_str}")


def log_dropped_examples(scheme: str, dropped: int, total: int):
    """Log examples left out by a partition scheme

    Args:
        scheme: Partition scheme name
        dropped: Number of examples not assigned to any client
        total: Dataset size
    """
    if dropped > 0:
        data_logger.info(f"Partition {scheme}: dropped {dropped} of {total} examples to keep the scheme exact")


def log_fisher_staleness(client_id: int, round_index: int, staleness: Dict[int, int]):
    """Log how old the FedCurv Fisher terms used by a client are

    Args:
        client_id: Client doing local training
        round_index: Current round
        staleness: Mapping of contributing client id to rounds since it sent its Fisher terms
    """
    if not staleness:
        return
    oldest = max(staleness.values())
    fl_logger.debug(f"FedCurv penalty for client {client_id} in round {round_index} uses {len(staleness)} Fisher terms, oldest {oldest} rounds stale")


def log_attack_restart(target: int, attempt: int, seed: int):
    """Log a gradient inversion restart after a non-finite objective

    Args:
        target: Index of the attacked example
        attempt: Restart number (1-based)
        seed: Seed used for the new initialization
    """
    attack_logger.warning(f"Non-finite objective on target {target}, restart {attempt} with seed {seed}")

