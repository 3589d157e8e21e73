"""
Экспорт результатов оценки в CSV и JSON для внешних инструментов
"""
import csv
import io
from pathlib import Path
from typing import Iterable, Sequence, Union

from oc4seq_project.storage import atomic_write_json, atomic_write_text
from .services import EvalReport, PRCurve

PR_CURVE_HEADER = ('threshold', 'precision', 'recall')
PROJECTION_HEADER = ('x', 'y', 'label')


def render_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(value)) if isinstance(value, float) else value for value in row])
    return buffer.getvalue()


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_text(path, render_csv(header, rows))


def write_pr_curve(path: Union[str, Path], curve: PRCurve) -> Path:
    return write_csv(path, PR_CURVE_HEADER, zip(curve.thresholds, curve.precisions, curve.recalls))


def write_projection(path: Union[str, Path], points: Iterable[Sequence]) -> Path:
    return write_csv(path, PROJECTION_HEADER, points)


def write_report(path: Union[str, Path], report: EvalReport, **extra) -> Path:
    payload = report.to_dict()
    payload.update(extra)
    return atomic_write_json(path, payload)


def read_csv_rows(path: Union[str, Path]) -> list:
    """Строки CSV как словари по заголовку"""
    with open(path, newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))
