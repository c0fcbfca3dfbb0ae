from typing import List, Optional

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter
from openpyxl.worksheet.worksheet import Worksheet

from ttsolve.core.report_models import ComparisonReport, ComparisonRow
from ttsolve.utils.logger import setup_logger

logger = setup_logger()


class ReportService:
    """Writes the solver comparison as an Excel workbook."""

    HEADER_ROW = 4
    HEADERS = [
        ("Method", 20), ("Problem", 24), ("Precond", 10), ("Converged", 11), ("Iterations", 11),
        ("Final residual", 16), ("Max rank", 10), ("Total flops", 18), ("Flops vs best", 14), ("Seconds", 10),
    ]

    _THIN_BORDER = Border(left=Side(style='thin'), right=Side(style='thin'),
                          top=Side(style='thin'), bottom=Side(style='thin'))
    _CENTER_ALIGN = Alignment(horizontal="center", vertical="center")
    _FAILED_FILL = PatternFill(start_color="F8CBAD", end_color="F8CBAD", fill_type="solid")

    def generate_report(self, data: ComparisonReport, output_path: str) -> str:
        """Generates an Excel workbook from a ComparisonReport."""
        logger.info(f"Generating comparison workbook for: {data.title}")
        wb = Workbook()
        ws = wb.active
        ws.title = "Comparison"

        self._write_title(ws, data.title)
        self._write_metadata(ws, data)
        self._setup_table_headers(ws)
        self._write_data_rows(ws, data.rows)

        wb.save(output_path)
        logger.info(f"Workbook saved to: {output_path}")
        return output_path

    def _last_column(self) -> str:
        return get_column_letter(len(self.HEADERS))

    def _write_title(self, ws: Worksheet, title: str) -> None:
        ws.merge_cells(f'A1:{self._last_column()}1')
        cell = ws['A1']
        cell.value = f"SOLVER COMPARISON: {title}"
        cell.font = Font(size=14, bold=True, color="FFFFFF")
        cell.fill = PatternFill(start_color="1F4E78", end_color="1F4E78", fill_type="solid")
        cell.alignment = self._CENTER_ALIGN

    def _write_metadata(self, ws: Worksheet, data: ComparisonReport) -> None:
        ws.merge_cells(f'A2:{self._last_column()}2')
        cell = ws['A2']
        cell.value = f"Run ID: {data.run_id} | Generated: {data.generated_at} | Seed: {data.seed}"
        cell.font = Font(italic=True, color="555555")
        cell.alignment = self._CENTER_ALIGN

    def _setup_table_headers(self, ws: Worksheet) -> None:
        header_font = Font(bold=True, color="FFFFFF")
        header_fill = PatternFill(start_color="36454F", end_color="36454F", fill_type="solid")

        for col_num, (text, width) in enumerate(self.HEADERS, 1):
            cell = ws.cell(row=self.HEADER_ROW, column=col_num, value=text)
            cell.font = header_font
            cell.fill = header_fill
            cell.alignment = self._CENTER_ALIGN
            cell.border = self._THIN_BORDER
            ws.column_dimensions[get_column_letter(col_num)].width = width

    @staticmethod
    def _best_flops(rows: List[ComparisonRow]) -> Optional[int]:
        converged = [row.total_flops for row in rows if row.converged and row.total_flops > 0]
        return min(converged) if converged else None

    def _write_data_rows(self, ws: Worksheet, rows: List[ComparisonRow]) -> None:
        best = self._best_flops(rows)
        for i, row_data in enumerate(rows, start=self.HEADER_ROW + 1):
            self._write_single_row(ws, i, row_data, best)

    def _write_single_row(self, ws: Worksheet, row_idx: int, data: ComparisonRow, best: Optional[int]) -> None:
        ratio = data.total_flops / best if best else None
        values = [data.method, data.problem, "yes" if data.precond else "no", "yes" if data.converged else "no",
                  data.iterations, data.final_residual, data.max_rank, data.total_flops, ratio, data.seconds]
        formats = [None, None, None, None, "0", "0.000E+00", "0", "#,##0", "0.00", "0.000"]

        for col_num, (value, number_format) in enumerate(zip(values, formats), 1):
            cell = ws.cell(row=row_idx, column=col_num, value=value)
            cell.border = self._THIN_BORDER
            cell.alignment = self._CENTER_ALIGN
            if number_format:
                cell.number_format = number_format
            if not data.converged:
                cell.fill = self._FAILED_FILL
