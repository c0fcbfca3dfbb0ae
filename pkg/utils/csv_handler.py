import csv
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ttsolve.config import Config
from ttsolve.core.report_models import ComparisonRow, RankTraceRow, TraceRecord

TRACE_COLUMNS = ["index", "sweep", "site", "residual_estimate", "true_residual", "max_rank", "ranks",
                 "cumulative_flops", "wall_seconds"]
COMPARISON_COLUMNS = ["method", "problem", "precond", "converged", "iterations", "final_residual", "max_rank",
                      "total_flops", "seconds"]


class CSVHandler:
    """Reads and writes the versioned CSV files of the benchmark driver."""

    @staticmethod
    def _header_line(kind: str) -> str:
        return f"# ttsolve {kind} schema {Config.SCHEMA_VERSION}"

    @staticmethod
    def _format(value: Any) -> str:
        if value is None:
            return ""
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return repr(value)
        if isinstance(value, (list, tuple)):
            return " ".join(str(v) for v in value)
        return str(value)

    @staticmethod
    def _write(csv_path: str, kind: str, columns: Sequence[str], rows: List[Sequence[Any]]) -> str:
        directory = os.path.dirname(csv_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(csv_path, 'w', encoding='utf-8', newline='') as f:
            f.write(CSVHandler._header_line(kind) + "\n")
            writer = csv.writer(f)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([CSVHandler._format(value) for value in row])
        return csv_path

    @staticmethod
    def write_trace(csv_path: str, trace: List[TraceRecord]) -> str:
        """Write one row per Arnoldi step or sweep site.

        Args:
            csv_path: Destination file
            trace: Trace rows of a SolveReport

        Returns:
            The path that was written
        """
        rows = [[getattr(record, column) for column in TRACE_COLUMNS] for record in trace]
        return CSVHandler._write(csv_path, "trace", TRACE_COLUMNS, rows)

    @staticmethod
    def write_comparison(csv_path: str, rows: List[ComparisonRow]) -> str:
        values = [[getattr(row, column) for column in COMPARISON_COLUMNS] for row in rows]
        return CSVHandler._write(csv_path, "comparison", COMPARISON_COLUMNS, values)

    @staticmethod
    def write_ranks(csv_path: str, rows: List[RankTraceRow], variants: Sequence[str]) -> str:
        """Write the per-iteration Krylov ranks, one column per GMRES variant."""
        columns = ["iteration"] + list(variants)
        values = [[row.iteration] + [row.ranks.get(variant) for variant in variants] for row in rows]
        return CSVHandler._write(csv_path, "ranks", columns, values)

    @staticmethod
    def read_csv(csv_path: str) -> Tuple[str, int, List[Dict[str, str]]]:
        """Read a file written by this handler.

        Args:
            csv_path: Path to the CSV file

        Returns:
            (kind, schema version, rows as dicts of strings)
        """
        if not os.path.exists(csv_path):
            raise FileNotFoundError(f"CSV file not found: {csv_path}")

        with open(csv_path, 'r', encoding='utf-8', newline='') as f:
            header = f.readline().strip().split()
            if len(header) != 5 or header[:2] != ["#", "ttsolve"] or header[3] != "schema":
                raise ValueError(f"{csv_path} does not start with a ttsolve schema line")
            rows = list(csv.DictReader(f))
        return header[2], int(header[4]), rows

    @staticmethod
    def parse_ranks(value: str) -> List[int]:
        return [int(v) for v in value.split()]

    @staticmethod
    def parse_optional_float(value: str) -> Optional[float]:
        return float(value) if value else None
