"""
Command-line interface for TKIL experiments.

Commands:
    run          Train and evaluate every seed of a config
    sweep-gamma  One run per GTK weight γ
    ablate       One run per component set (kd, kd+avg, full)
    report       Summarize a finished run directory
"""

import sys
import traceback
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from src import __version__
from src.harness import (
    ExperimentConfig, GridTable, ResultsBundle, ablate, gamma_sweep, report, run,
)
from src.utils.config import load_config
from src.utils.errors import OutputExists
from src.utils.logging_setup import configure_logging

console = Console()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EXISTS = 2
EXIT_ERROR = 5


def print_banner():
    """Display TKIL banner."""
    banner = f"""
    [bold cyan]TKIL[/bold cyan] v{__version__}
    Class-incremental learning with task-model averaging
    """
    console.print(Panel(banner, border_style="cyan"))


def print_usage():
    """Display usage information."""
    usage = Table(show_header=False, box=None)
    usage.add_column(style="yellow")
    usage.add_column()

    usage.add_row("Usage:", "python tkil.py run --config <file> [--force]")
    usage.add_row("", "python tkil.py sweep-gamma --config <file> --gammas 0,0.1,1,10 [--force]")
    usage.add_row("", "python tkil.py ablate --config <file> --components kd,kd+avg,full [--force]")
    usage.add_row("", "python tkil.py report <run-dir>")
    usage.add_row("", "")
    usage.add_row("Example:", "python tkil.py run --config config/blobs_smoke.yaml")
    usage.add_row("", "")
    usage.add_row("Options:", "--help          Show this message")
    usage.add_row("", "--version, -v   Show version")
    usage.add_row("", "--verbose       Print tracebacks on errors")
    usage.add_row("", "")
    usage.add_row("Exit codes:", "0 success, 1 usage error, 2 results exist, 5 error")

    console.print(usage)


def _option(args: List[str], name: str) -> Optional[str]:
    if name not in args:
        return None
    idx = args.index(name)
    if idx + 1 >= len(args) or args[idx + 1].startswith("--"):
        raise SystemExit(_usage_error(f"{name} requires a value"))
    return args[idx + 1]


def _usage_error(message: str) -> int:
    console.print(f"[red]Error:[/red] {message}")
    console.print("Run 'python tkil.py --help' for usage information")
    return EXIT_USAGE


def _load(config_path: str) -> ExperimentConfig:
    raw = load_config(config_path)
    configure_logging(raw)
    return ExperimentConfig.from_dict(raw)


def print_summary(summaries, title: str):
    """Per-stage mean ± std table."""
    table = Table(title=title)
    table.add_column("Stage", justify="right")
    table.add_column("Classes", justify="right")
    table.add_column("Task acc", justify="right")
    table.add_column("Class acc", justify="right")
    table.add_column("Base acc", justify="right")
    table.add_column("Avg inc acc", justify="right")
    table.add_column("Balance std", justify="right")

    def cell(s, metric):
        if metric not in s.mean:
            return "-"
        return f"{s.mean[metric]:.3f} ± {s.std[metric]:.3f}"

    for s in summaries:
        table.add_row(
            str(s.stage), str(s.seen_classes),
            cell(s, 'task_accuracy'), cell(s, 'class_accuracy'), cell(s, 'base_class_accuracy'),
            f"{s.avg_incremental_accuracy:.3f} ± {s.avg_incremental_std:.3f}",
            f"{s.balance_std:.3f}",
        )
    console.print(table)

    extras = [m for m in ('oracle_class_accuracy', 'single_sample_task_accuracy')
              if all(m in s.mean for s in summaries)]
    for metric in extras:
        values = ", ".join(f"{s.mean[metric]:.3f}" for s in summaries)
        console.print(f"  [dim]{metric}:[/dim] {values}")


def print_grid(grid: GridTable, title: str):
    table = Table(title=title)
    table.add_column(grid.row_label)
    for t in range(1, grid.num_stages + 1):
        table.add_column(f"S{t}", justify="right")
    for key, values in grid.rows.items():
        table.add_row(key, *[f"{v:.3f}" for v in values])
    console.print(table)


def cmd_run(config_path: str, force: bool) -> int:
    config = _load(config_path)
    console.print(f"\n[bold]Config:[/bold] {config_path}")
    console.print(f"[bold]Fingerprint:[/bold] {config.fingerprint[:12]}")

    bundle = run(config, force=force)
    summaries = report(bundle, config.run_dir)
    console.print()
    print_summary(summaries, f"Run {bundle.fingerprint[:12]}")
    console.print(f"\n[green][OK][/green] Results in {config.run_dir}")
    return EXIT_OK


def cmd_sweep_gamma(config_path: str, gammas: List[float], force: bool) -> int:
    config = _load(config_path)
    grid = gamma_sweep(config, gammas, force=force)
    console.print()
    print_grid(grid, "Task accuracy per γ")
    console.print(f"\n[green][OK][/green] Table in {config.output_dir / 'gamma_sweep.tsv'}")
    return EXIT_OK


def cmd_ablate(config_path: str, components: List[str], force: bool) -> int:
    config = _load(config_path)
    grid = ablate(config, components, force=force)
    console.print()
    print_grid(grid, "Task accuracy per component")
    console.print(f"\n[green][OK][/green] Tables in {config.output_dir}")
    return EXIT_OK


def cmd_report(run_dir: str) -> int:
    configure_logging()
    bundle = ResultsBundle.load(run_dir)
    summaries = report(bundle, Path(run_dir))
    print_summary(summaries, f"Run {bundle.fingerprint[:12]} (code {bundle.code_version})")
    console.print(f"\n[green][OK][/green] Wrote results.tsv and accuracy_curves.png to {run_dir}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    args = list(sys.argv[1:] if argv is None else argv)

    if not args or "--help" in args or "-h" in args:
        print_banner()
        print_usage()
        return EXIT_OK

    if "--version" in args or "-v" in args:
        console.print(f"TKIL v{__version__}")
        return EXIT_OK

    verbose = "--verbose" in args
    force = "--force" in args
    command = args[0]

    try:
        if command == "report":
            if len(args) < 2 or args[1].startswith("--"):
                return _usage_error("report requires a run directory")
            return cmd_report(args[1])

        if command not in ("run", "sweep-gamma", "ablate"):
            return _usage_error(f"Unknown command '{command}'")

        config_path = _option(args, "--config")
        if config_path is None:
            return _usage_error(f"{command} requires --config <file>")

        if command == "run":
            return cmd_run(config_path, force)

        if command == "sweep-gamma":
            raw = _option(args, "--gammas")
            if raw is None:
                return _usage_error("sweep-gamma requires --gammas, e.g. 0,0.1,1,10")
            try:
                gammas = [float(g) for g in raw.split(",") if g.strip()]
            except ValueError:
                return _usage_error(f"Invalid γ list: {raw}")
            return cmd_sweep_gamma(config_path, gammas, force)

        raw = _option(args, "--components") or "kd,kd+avg,full"
        components = [c.strip() for c in raw.split(",") if c.strip()]
        return cmd_ablate(config_path, components, force)

    except SystemExit as e:
        return int(e.code)
    except OutputExists as e:
        console.print(f"[yellow]Exists:[/yellow] {e}")
        return EXIT_EXISTS
    except FileNotFoundError as e:
        console.print(f"[red]Error:[/red] {e}")
        return EXIT_ERROR
    except ValueError as e:
        console.print(f"[red]Error:[/red] {e}")
        if verbose:
            traceback.print_exc()
        return EXIT_ERROR
    except Exception as e:
        console.print(f"[red]Error:[/red] {e}")
        if verbose:
            traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
