"""Rounds-to-accuracy summaries of recorded runs."""

import math
from typing import Sequence

import numpy as np

from src.data.models import RoundRecord
from src.utils.errors import ConfigurationError

DEFAULT_FRACTIONS = (0.5, 0.9, 1.0)


def rounds_to_fraction(accuracy_series: Sequence[float], reference_final_acc: float, a: float) -> int | None:
    """First round (1-indexed) whose accuracy reaches a * reference; None if never."""
    if a <= 0:
        raise ConfigurationError(f"fraction must be > 0, got {a}")
    if len(accuracy_series) == 0:
        raise ConfigurationError("accuracy series is empty")
    threshold = a * reference_final_acc
    for t, acc in enumerate(accuracy_series, start=1):
        if acc >= threshold:
            return t
    return None


def fraction_key(a: float) -> str:
    return f"R_{float(a)}"


def summarize_run(records: list[RoundRecord], reference_accuracy: float | None, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> dict:
    """Final/best accuracy, mean forgetting increment and R_a per fraction.

    Without a reference accuracy the run's own final accuracy is used.
    """
    if not records:
        return {"rounds": 0}
    accuracies = [r.test_accuracy for r in records]
    reference = reference_accuracy if reference_accuracy is not None else accuracies[-1]
    increments = [r.mean_increment for r in records if r.mean_increment is not None]
    paired = [r.paired_increment for r in records if r.paired_increment is not None]
    correlations = [r.fisher_correlation for r in records if r.fisher_correlation is not None and not math.isnan(r.fisher_correlation)]
    summary = {
        "rounds": len(records),
        "final_accuracy": accuracies[-1],
        "best_accuracy": max(accuracies),
        "reference_accuracy": reference,
        "mean_increment": float(np.mean(increments)) if increments else None,
        "mean_paired_increment": float(np.mean(paired)) if paired else None,
        "mean_fisher_correlation": float(np.mean(correlations)) if correlations else None,
        "flagged_updates": sum(r.flagged_clients for r in records),
    }
    for a in fractions:
        summary[fraction_key(a)] = rounds_to_fraction(accuracies, reference, a)
    return summary
