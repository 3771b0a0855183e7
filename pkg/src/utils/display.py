import math

from colorama import Fore, Style
from tabulate import tabulate

from src.data.models import ReconResult, RoundRecord


def _fmt(value: float | None, spec: str = ".4f") -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return format(value, spec)


def _increment_color(increment: float | None) -> str:
    if increment is None:
        return Fore.WHITE
    return Fore.RED if increment > 0 else Fore.GREEN


def print_round_table(records: list[RoundRecord], last: int | None = 10) -> None:
    """
    Print the most recent rounds as a colored grid.

    Args:
        records: Round records in round order
        last: Number of trailing rounds to show (all when None)
    """
    if not records:
        print(f"{Fore.RED}No rounds recorded{Style.RESET_ALL}")
        return

    shown = records if last is None else records[-last:]
    table_data = []
    for r in shown:
        flagged_color = Fore.RED if r.flagged_clients else Fore.WHITE
        table_data.append(
            [
                r.round,
                f"{Fore.CYAN}{r.test_accuracy:.4f}{Style.RESET_ALL}",
                _fmt(r.mean_loss_prev),
                _fmt(r.mean_loss_curr),
                f"{_increment_color(r.mean_increment)}{_fmt(r.mean_increment, '+.4f')}{Style.RESET_ALL}",
                _fmt(r.fisher_correlation, ".3f"),
                f"{flagged_color}{r.flagged_clients}{Style.RESET_ALL}",
            ]
        )

    print(f"\n{Fore.WHITE}{Style.BRIGHT}ROUNDS:{Style.RESET_ALL}")
    print(
        tabulate(
            table_data,
            headers=["Round", "Accuracy", "Loss prev", "Loss curr", "Increment", "Fisher rho", "Flagged"],
            tablefmt="grid",
            colalign=("right", "right", "right", "right", "right", "right", "right"),
        )
    )


def print_run_summary(summary: dict) -> None:
    """Print the summary.json content of a run."""
    rows = [
        ["Rounds", summary["rounds"]],
        ["Final Accuracy", f"{Fore.GREEN}{_fmt(summary['final_accuracy'])}{Style.RESET_ALL}"],
        ["Best Accuracy", f"{Fore.GREEN}{_fmt(summary['best_accuracy'])}{Style.RESET_ALL}"],
        ["Reference Accuracy", _fmt(summary.get("reference_accuracy"))],
        ["Mean Increment", f"{_increment_color(summary.get('mean_increment'))}{_fmt(summary.get('mean_increment'), '+.4f')}{Style.RESET_ALL}"],
    ]
    if summary.get("mean_paired_increment") is not None:
        rows.append(["Mean Paired Increment", f"{_increment_color(summary['mean_paired_increment'])}{_fmt(summary['mean_paired_increment'], '+.4f')}{Style.RESET_ALL}"])
    rows += [
        ["Mean Fisher rho", _fmt(summary.get("mean_fisher_correlation"), ".3f")],
        ["Flagged Updates", summary.get("flagged_updates", 0)],
    ]
    for key in sorted(k for k in summary if k.startswith("R_")):
        value = summary[key]
        rows.append([key, f"{Fore.YELLOW}{value if value is not None else '-'}{Style.RESET_ALL}"])

    print(f"\n{Fore.WHITE}{Style.BRIGHT}RUN SUMMARY:{Style.RESET_ALL}")
    print(tabulate(rows, tablefmt="grid", colalign=("left", "right")))


def print_partition_stats(sizes: list[int], class_counts: list[dict[int, int]], scheme: str) -> None:
    """Client count, size histogram and per-client class counts."""
    print(f"\n{Fore.WHITE}{Style.BRIGHT}PARTITION:{Style.RESET_ALL} {Fore.CYAN}{scheme}{Style.RESET_ALL}")
    print(f"Clients: {len(sizes)}  Examples: {sum(sizes)}")

    histogram: dict[int, int] = {}
    for size in sizes:
        histogram[size] = histogram.get(size, 0) + 1
    print(tabulate(sorted(histogram.items(), reverse=True), headers=["Size", "Clients"], tablefmt="grid"))

    per_class = {len(c) for c in class_counts}
    if len(per_class) == 1:
        print(f"classes per client: {per_class.pop()}")

    table_data = []
    for cid, (size, counts) in enumerate(zip(sizes, class_counts)):
        labels = ", ".join(f"{label}:{n}" for label, n in sorted(counts.items()))
        table_data.append([cid, size, len(counts), labels])
    print(tabulate(table_data, headers=["Client", "Size", "Classes", "Counts"], tablefmt="grid", colalign=("right", "right", "right", "left")))


def print_attack_results(results: list[ReconResult], labels: list[int], defense: str) -> None:
    table_data = []
    for index, (result, label) in enumerate(zip(results, labels)):
        label_color = Fore.GREEN if result.label == label else Fore.RED
        table_data.append(
            [
                index,
                label,
                f"{label_color}{result.label}{Style.RESET_ALL}",
                f"{Fore.CYAN}{_fmt(result.psnr_db, '.2f')}{Style.RESET_ALL}",
                f"{result.objective:.3e}",
                result.restarts,
            ]
        )

    finite = [r.psnr_db for r in results if math.isfinite(r.psnr_db)]
    print(f"\n{Fore.WHITE}{Style.BRIGHT}ATTACK RESULTS:{Style.RESET_ALL} [{Fore.CYAN}{defense}{Style.RESET_ALL}]")
    print(
        tabulate(
            table_data,
            headers=["Target", "Label", "Recovered", "PSNR (dB)", "Objective", "Restarts"],
            tablefmt="grid",
            colalign=("right", "right", "right", "right", "right", "right"),
        )
    )
    if finite:
        print(f"Mean PSNR: {Fore.YELLOW}{sum(finite) / len(finite):.2f} dB{Style.RESET_ALL}")


def print_diagnose_table(rows: list[dict], fractions: tuple[float, ...]) -> None:
    """R_a table for several runs; "-" where a fraction was never reached."""
    headers = ["Run", "Final", "Reference"] + [f"R_{a}" for a in fractions]
    table_data = []
    for row in rows:
        table_data.append(
            [f"{Fore.CYAN}{row['name']}{Style.RESET_ALL}", _fmt(row["final_accuracy"]), _fmt(row["reference_accuracy"])]
            + [row[f"R_{float(a)}"] if row[f"R_{float(a)}"] is not None else "-" for a in fractions]
        )
    print(f"\n{Fore.WHITE}{Style.BRIGHT}ROUNDS TO ACCURACY:{Style.RESET_ALL}")
    print(tabulate(table_data, headers=headers, tablefmt="grid"))
