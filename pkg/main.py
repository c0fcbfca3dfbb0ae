"""Main entry point for ttsolve.

Subcommands run the solvers on generated problems and write machine-readable
reports; main.py only parses arguments and coordinates the services.
"""

import argparse
import json
import os
import sys
from typing import List, Optional

from pydantic import ValidationError
from rich.panel import Panel
from rich.rule import Rule
from rich.table import Table

from ttsolve.config import Config
from ttsolve.utils.logger import console, get_run_dir, save_state, setup_logger

logger = setup_logger()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

_THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttsolve", description="Tensor-train linear solver benchmarks")
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "run one solver and write report.json and trace.csv",
        "compare": "run several solvers on the same problem and write comparison.csv",
        "ranktrace": "record Krylov basis ranks of TT-GMRES variants in ranks.csv",
        "export": "write the configured operator and right-hand side as TTO1/TTV1 files",
    }
    for name, text in helps.items():
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument("--config", required=True, help="JSON run configuration")
        sub.add_argument("--out", required=True, help="output directory")
        sub.add_argument("--threads", type=int, default=None, help="kernel threads (default TTSOLVE_THREADS)")
        sub.add_argument("--seed", type=int, default=None, help="override the configured seed")
    return parser


def apply_threads(threads: Optional[int]) -> int:
    """Pin BLAS/OpenMP thread counts; only effective before numpy is first imported."""
    count = Config.THREADS if threads is None else threads
    if count < 1:
        raise ValueError("--threads must be at least 1")
    for name in _THREAD_VARIABLES:
        os.environ[name] = str(count)
    return count


def load_run_config(path: str, seed: Optional[int]):
    """Read and validate the JSON run configuration.

    Args:
        path: Config file path
        seed: Optional seed overriding the file's value

    Returns:
        A validated RunConfig
    """
    from ttsolve.core.errors import ConfigError
    from ttsolve.core.models import RunConfig

    logger.info(f"Loading run configuration from {path}...")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        if seed is not None:
            raw["seed"] = seed
        run = RunConfig.model_validate(raw)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration in {path}:\n{e}") from e

    logger.debug(f"Run configuration: {run.model_dump_json()}")
    save_state("01_config", {"config_file": path, "run": run}, logger)
    return run


def cmd_solve(runner, out_dir: str) -> int:
    from ttsolve.core.serialization import write_train
    from ttsolve.utils.csv_handler import CSVHandler

    console.print(Rule("[bold magenta]Solve[/bold magenta]", style="magenta"))
    x, report = runner.solve()

    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, 'w', encoding='utf-8') as f:
        f.write(report.model_dump_json(indent=2))
    trace_path = CSVHandler.write_trace(os.path.join(out_dir, "trace.csv"), report.trace)
    write_train(x, os.path.join(out_dir, "solution.ttv"))
    save_state("02_summary", {"report": report.model_dump(exclude={"trace"})}, logger)

    status = "[bold green]converged[/bold green]" if report.converged else "[bold red]not converged[/bold red]"
    console.print(Panel(
        f"{report.method}: {status}\n\n"
        f"[bold]Residual:[/bold] {report.final_residual:.3e}\n"
        f"[bold]Iterations:[/bold] {report.iterations} ({report.sweeps} sweeps/cycles)\n"
        f"[bold]Solution ranks:[/bold] {report.solution_ranks}\n"
        f"[bold]Flops:[/bold] {report.total_flops:,}\n\n"
        f"[bold]Output:[/bold] [cyan]{report_path}[/cyan], [cyan]{trace_path}[/cyan]",
        title="Result",
        expand=False
    ))
    for notice in report.notices:
        console.print(f"[yellow]⚠[/yellow] {notice}")
    return EXIT_OK if report.converged else EXIT_FAILED


def cmd_compare(runner, out_dir: str) -> int:
    from datetime import datetime

    from ttsolve.core.report_models import ComparisonReport
    from ttsolve.services.report_service import ReportService
    from ttsolve.utils.csv_handler import CSVHandler
    from ttsolve.utils.logger import get_run_id

    console.print(Rule("[bold magenta]Compare[/bold magenta]", style="magenta"))
    rows = runner.compare()
    csv_path = CSVHandler.write_comparison(os.path.join(out_dir, "comparison.csv"), rows)
    ReportService().generate_report(ComparisonReport(
        title=runner.label,
        run_id=get_run_id(),
        generated_at=datetime.now().strftime("%Y-%m-%d %H:%M"),
        seed=runner.run.seed,
        rows=rows,
    ), os.path.join(out_dir, "comparison.xlsx"))
    save_state("02_summary", {"rows": rows}, logger)

    table = Table(title=f"Comparison on {runner.label}")
    for column in ("Method", "Precond", "Converged", "Iterations", "Residual", "Max rank", "Flops"):
        table.add_column(column, justify="left" if column == "Method" else "right")
    for row in rows:
        table.add_row(row.method, "yes" if row.precond else "no", "yes" if row.converged else "[red]no[/red]",
                      str(row.iterations), f"{row.final_residual:.2e}", str(row.max_rank), f"{row.total_flops:,}")
    console.print(table)
    console.print(f"[bold]Output:[/bold] [cyan]{csv_path}[/cyan]")
    return EXIT_OK if all(row.converged for row in rows) else EXIT_FAILED


def cmd_ranktrace(runner, out_dir: str) -> int:
    from ttsolve.utils.csv_handler import CSVHandler

    console.print(Rule("[bold magenta]Rank trace[/bold magenta]", style="magenta"))
    rows, variants = runner.ranktrace()
    csv_path = CSVHandler.write_ranks(os.path.join(out_dir, "ranks.csv"), rows, variants)
    save_state("02_summary", {"variants": variants, "iterations": len(rows)}, logger)

    table = Table(title="Peak Krylov basis rank")
    for variant in variants:
        table.add_column(variant, justify="right")
    table.add_row(*[str(max((row.ranks[v] for row in rows if row.ranks[v] is not None), default="-"))
                    for v in variants])
    console.print(table)
    console.print(f"[bold]Output:[/bold] [cyan]{csv_path}[/cyan]")
    return EXIT_OK


def cmd_export(runner, out_dir: str) -> int:
    from ttsolve.core.serialization import write_operator, write_train

    operator_path = write_operator(runner.a, os.path.join(out_dir, "operator.tto"))
    rhs_path = write_train(runner.b, os.path.join(out_dir, "rhs.ttv"))
    console.print(f"[green]✔[/green] Exported [cyan]{operator_path}[/cyan] and [cyan]{rhs_path}[/cyan]")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "compare": cmd_compare,
    "ranktrace": cmd_ranktrace,
    "export": cmd_export,
}


def run(argv: Optional[List[str]] = None) -> int:
    """Execute one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)

    logger.info("=" * 60)
    logger.info(f"TTSOLVE - {args.command}")
    logger.info("=" * 60)
    logger.info(f"Run directory: {get_run_dir()}")

    try:
        Config.validate()
        threads = apply_threads(args.threads)
    except ValueError as e:
        logger.error(f"Configuration Error: {e}")
        console.print(f"[bold red]Configuration Error:[/bold red] {e}")
        return EXIT_CONFIG
    logger.debug(f"Kernel threads: {threads}")

    from ttsolve.core.errors import ConfigError
    from ttsolve.services.bench_runner import BenchRunner

    try:
        run_config = load_run_config(args.config, args.seed)
        runner = BenchRunner(run_config)
    except ConfigError as e:
        logger.error(f"Configuration Error: {e}")
        console.print(f"[bold red]Configuration Error:[/bold red] {e}")
        return EXIT_CONFIG

    try:
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](runner, args.out)
    except ConfigError as e:
        logger.error(f"Configuration Error: {e}")
        console.print(f"[bold red]Configuration Error:[/bold red] {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        console.print(f"[bold red]❌ {args.command} failed:[/bold red] {e}")
        return EXIT_FAILED


def main():
    """Console script entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
