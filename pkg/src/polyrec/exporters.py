"""Export evaluation history (one row per dev evaluation) to CSV and Excel."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import List, Mapping, Sequence, Tuple

from openpyxl import Workbook
from openpyxl.utils import get_column_letter

from .models import EvalReport

Record = Mapping[str, object]
METRIC_COLUMNS = ("step", "auc", "mrr", "ndcg5", "ndcg10", "n_impressions", "skipped_auc")


def report_table(reports: Sequence[EvalReport | Record]) -> Tuple[List[str], List[List[object]]]:
    """
    Headers and rows for a list of reports. The metric columns come first in
    a fixed order; extra keys follow in first-seen order. NaN becomes blank.
    """

    records = [report.to_dict() if isinstance(report, EvalReport) else dict(report) for report in reports]
    headers: List[str] = [column for column in METRIC_COLUMNS if any(column in r for r in records)]
    for record in records:
        for key in record:
            if key not in headers:
                headers.append(key)
    rows = [[_cell(record.get(header)) for header in headers] for record in records]
    return headers, rows


def export_to_csv(reports: Sequence[EvalReport | Record], output_path: str | Path) -> Path:
    if not reports:
        raise ValueError("No reports supplied for export")

    headers, rows = report_table(reports)
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(headers)
        writer.writerows(rows)
    return path


def export_to_excel(
    reports: Sequence[EvalReport | Record],
    output_path: str | Path,
    *,
    sheet_name: str = "Evaluation",
) -> Path:
    """Workbook with a frozen header row and 4-decimal metric cells."""

    if not reports:
        raise ValueError("No reports supplied for export")

    headers, rows = report_table(reports)
    workbook = Workbook()
    worksheet = workbook.active
    worksheet.title = sheet_name
    worksheet.append(headers)
    for row in rows:
        worksheet.append(row)
    worksheet.freeze_panes = "A2"

    for column, header in enumerate(headers, start=1):
        if header in ("auc", "mrr", "ndcg5", "ndcg10"):
            for (cell,) in worksheet.iter_rows(min_row=2, min_col=column, max_col=column):
                cell.number_format = "0.0000"

    _auto_size_columns(worksheet, headers, rows)

    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    workbook.save(path)
    return path


def _cell(value: object) -> object:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return ""
    return value


def _auto_size_columns(worksheet, headers: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    widths = [len(str(header)) for header in headers]
    for row in rows:
        for idx, cell in enumerate(row):
            text = f"{cell:.4f}" if isinstance(cell, float) else str(cell)
            widths[idx] = max(widths[idx], len(text))

    for idx, width in enumerate(widths, start=1):
        worksheet.column_dimensions[get_column_letter(idx)].width = min(width + 2, 40)


__all__ = ["export_to_csv", "export_to_excel", "report_table"]
