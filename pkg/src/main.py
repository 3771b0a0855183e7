import argparse
import json
import logging
import math
import os
import sys

import numpy as np
import pandas as pd
from colorama import Fore, Style, init
from dotenv import load_dotenv

from src.cfg.presets import deep_merge
from src.config import ExperimentConfig, config_from_dict, echo_config, parse_config
from src.data.models import ROUND_COLUMNS, ReconResult, RoundRecord
from src.data.partition import partition
from src.diagnostics.summary import DEFAULT_FRACTIONS, fraction_key, summarize_run
from src.privacy.attack import attack_targets, infer_image_shape
from src.privacy.images import write_pgm, write_recon_grid
from src.privacy.metrics import capped_psnr
from src.privacy.updates import build_attack_simulators
from src.simulator import FederatedSimulator, load_experiment_data
from src.utils.display import print_attack_results, print_diagnose_table, print_partition_stats, print_round_table, print_run_summary
from src.utils.errors import ConfigurationError, IngestionError, NumericError
from src.utils.logging import configure_logging, fl_logger
from src.utils.progress import RoundProgress
from src.utils.seeding import TARGETS, derive_rng

# Load environment variables from .env file
load_dotenv()

init(autoreset=True)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2

CSV_FLOAT_FORMAT = "%.17g"


def load_config(args) -> ExperimentConfig:
    """Parse --config and fold command-line overrides into it."""
    config = parse_config(args.config)
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    attack = {}
    for flag, field in (("defense", "defense"), ("targets", "targets"), ("iterations", "iterations"), ("train_rounds", "train_rounds"), ("attacker", "attacker_model")):
        value = getattr(args, flag, None)
        if value is not None:
            attack[field] = value
    if attack:
        overrides["attack"] = attack
    if not overrides:
        return config
    return config_from_dict(deep_merge(config.model_dump(mode="json", exclude_none=True), overrides))


class RoundsWriter:
    """Appends one rounds.csv row per finished round so a failing run keeps its prefix."""

    def __init__(self, path: str):
        self.path = path
        self.header_written = False
        if os.path.exists(path):
            os.remove(path)

    def __call__(self, record: RoundRecord):
        row = pd.DataFrame([record.to_row()], columns=ROUND_COLUMNS)
        row.to_csv(self.path, mode="a", header=not self.header_written, index=False, float_format=CSV_FLOAT_FORMAT)
        self.header_written = True


def cmd_run(args) -> int:
    config = load_config(args)
    output_dir = config.resolve_output_dir(args.out)
    echo_config(config, output_dir)

    writer = RoundsWriter(os.path.join(output_dir, "rounds.csv"))
    simulator = FederatedSimulator.from_config(
        config,
        workers=args.workers,
        progress=RoundProgress(enabled=not args.quiet),
        on_round=writer,
    )
    records = simulator.run_rounds()

    summary = summarize_run(records, config.reference_accuracy)
    summary["algorithm"] = config.train.algorithm.value
    summary["seed"] = config.seed
    with open(os.path.join(output_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    if not args.quiet:
        print_round_table(records)
        print_run_summary(summary)
    if args.plot:
        simulator.analyze_performance(plot_path=os.path.join(output_dir, "curves.png"))
    fl_logger.info(f"Wrote {len(records)} rounds to {output_dir}")
    return EXIT_OK


def run_attack(config: ExperimentConfig, workers: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[ReconResult]]:
    """Invert single-example updates under the configured defense.

    The attacked parameters are the initial global parameters, or the global
    parameters after attack.train_rounds federated rounds.

    Returns:
        (chosen example indices, inputs, labels, one ReconResult per target)
    """
    cfg = config.attack
    train, test = load_experiment_data(config)
    simulator = FederatedSimulator(config, train, test, workers=workers)
    if cfg.train_rounds:
        simulator.run_rounds(cfg.train_rounds)

    n_targets = min(cfg.targets, len(train))
    chosen = np.sort(derive_rng(config.seed, TARGETS).choice(len(train), size=n_targets, replace=False))
    inputs, labels = train.features[chosen], train.labels[chosen]
    image_shape = infer_image_shape(train.dim, cfg.image_shape)

    defense, attacker = build_attack_simulators(cfg, simulator.spec, simulator.global_params, config.train.learning_rate, fedreg=config.train.fedreg)
    results = attack_targets(attacker, inputs, labels, cfg, train.n_classes, image_shape, workers=workers, defense=defense)
    return chosen, inputs, labels, results


def cmd_attack(args) -> int:
    config = load_config(args)
    cfg = config.attack
    output_dir = config.resolve_output_dir(args.out)
    echo_config(config, output_dir)

    chosen, inputs, labels, results = run_attack(config, workers=args.workers)
    image_shape = infer_image_shape(inputs.shape[1], cfg.image_shape)

    rows = []
    for i, (index, label, result) in enumerate(zip(chosen, labels, results)):
        rows.append(
            {
                "target": i,
                "example": int(index),
                "label": int(label),
                "recovered_label": result.label,
                "psnr_db": capped_psnr(result.psnr_db),
                "objective": result.objective,
                "restarts": result.restarts,
            }
        )
        write_pgm(os.path.join(output_dir, f"target_{i}_truth.pgm"), inputs[i].reshape(image_shape))
        write_pgm(os.path.join(output_dir, f"target_{i}_recon.pgm"), result.reconstruction.reshape(image_shape))
    pd.DataFrame(rows).to_csv(os.path.join(output_dir, "psnr.csv"), index=False, float_format=CSV_FLOAT_FORMAT)
    write_recon_grid(
        os.path.join(output_dir, "grid.pgm"),
        [x.reshape(image_shape) for x in inputs],
        [r.reconstruction.reshape(image_shape) for r in results],
    )

    if not args.quiet:
        print_attack_results(results, [int(y) for y in labels], cfg.defense)
    return EXIT_OK


def cmd_partition_stats(args) -> int:
    config = load_config(args)
    train, _ = load_experiment_data(config)
    parts = partition(train, config.partition.scheme, config.partition.n_clients, config.seed, config.partition.to_params())
    sizes, counts = parts.sizes(), parts.class_counts(train)
    print_partition_stats(sizes, counts, parts.scheme.value)

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        frame = pd.DataFrame({"client": range(parts.n_clients), "size": sizes, "classes": [len(c) for c in counts]})
        frame.to_csv(os.path.join(args.out, "partition.csv"), index=False)
    return EXIT_OK


def _read_accuracy(path: str) -> list[float]:
    if not os.path.exists(path):
        raise ConfigurationError(f"rounds file not found: {path}")
    frame = pd.read_csv(path)
    if "accuracy" not in frame.columns or frame.empty:
        raise ConfigurationError(f"{path} has no accuracy rows")
    return frame["accuracy"].astype(float).tolist()


def _resolve_reference(reference: str | None) -> float | None:
    """A number, or the final accuracy of a reference rounds.csv."""
    if reference is None:
        return None
    try:
        value = float(reference)
    except ValueError:
        return _read_accuracy(reference)[-1]
    if not 0 < value <= 1:
        raise ConfigurationError(f"reference accuracy must lie in (0, 1], got {value}")
    return value


def cmd_diagnose(args) -> int:
    fractions = tuple(args.fractions) if args.fractions else DEFAULT_FRACTIONS
    if any(a <= 0 or math.isnan(a) for a in fractions):
        raise ConfigurationError(f"fractions must be > 0, got {list(fractions)}")
    reference = _resolve_reference(args.reference)

    rows = []
    for path in args.paths:
        accuracies = _read_accuracy(path)
        records = [RoundRecord(round=t, test_accuracy=acc) for t, acc in enumerate(accuracies, start=1)]
        summary = summarize_run(records, reference, fractions)
        summary["name"] = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
        rows.append(summary)
    print_diagnose_table(rows, fractions)

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        columns = ["name", "final_accuracy", "reference_accuracy"] + [fraction_key(a) for a in fractions]
        pd.DataFrame(rows, columns=columns).to_csv(os.path.join(args.out, "diagnose.csv"), index=False, float_format=CSV_FLOAT_FORMAT)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Federated learning simulator with FedReg and gradient inversion attacks")
    parser.add_argument("--savelog", action="store_true", help="Also write logs to a timestamped file")
    parser.add_argument("--verbose", action="store_true", help="Debug-level logging")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def common(sub: argparse.ArgumentParser):
        sub.add_argument("--config", required=True, help="Path to the TOML experiment config")
        sub.add_argument("--seed", type=int, help="Override the master seed")
        sub.add_argument("--out", help="Output directory (default: config output_dir, $FEDREG_OUTPUT_DIR or ./outputs)")

    run = subparsers.add_parser("run", help="Run federated training and write rounds.csv and summary.json")
    common(run)
    run.add_argument("--workers", type=int, default=1, help="Clients trained in parallel")
    run.add_argument("--quiet", action="store_true", help="No live progress or tables")
    run.add_argument("--plot", action="store_true", help="Write curves.png")
    run.set_defaults(func=cmd_run)

    attack = subparsers.add_parser("attack", help="Gradient inversion against simulated client updates")
    common(attack)
    attack.add_argument("--workers", type=int, default=1, help="Targets attacked in parallel")
    attack.add_argument("--quiet", action="store_true", help="No result table")
    attack.add_argument("--defense", choices=["plain", "dpsgd", "fedreg-mg"])
    attack.add_argument("--targets", type=int, help="Number of attacked examples")
    attack.add_argument("--iterations", type=int, help="Optimizer iterations per target")
    attack.add_argument("--attacker", choices=["defense", "plain"], help="Update model the attacker matches candidates with")
    attack.add_argument("--train-rounds", type=int, help="Federated rounds to train before attacking")
    attack.set_defaults(func=cmd_attack)

    stats = subparsers.add_parser("partition-stats", help="Describe the client partition")
    common(stats)
    stats.set_defaults(func=cmd_partition_stats)

    diagnose = subparsers.add_parser("diagnose", help="Rounds-to-accuracy table of recorded runs")
    diagnose.add_argument("paths", nargs="+", help="rounds.csv files")
    diagnose.add_argument("--reference", help="Reference accuracy, or a reference run's rounds.csv")
    diagnose.add_argument("--fractions", type=float, nargs="+", help="Accuracy fractions (default 0.5 0.9 1.0)")
    diagnose.add_argument("--out", help="Directory for diagnose.csv")
    diagnose.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(save_logs=args.savelog, level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except (ConfigurationError, IngestionError) as e:
        print(f"{Fore.RED}Error: {e}{Style.RESET_ALL}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"{Fore.RED}Numeric failure: {e}{Style.RESET_ALL}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
