"""Plot dev metrics over training steps."""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Mapping, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .models import EvalReport  # noqa: E402

PLOTTED_METRICS = ("auc", "mrr", "ndcg5", "ndcg10")


def collect_metric_series(
    reports: Sequence[EvalReport | Mapping[str, object]], metric: str
) -> List[Tuple[int, float]]:
    """
    ``(step, value)`` pairs for one metric.

    Reports missing the metric, or holding a non-numeric or NaN value, are
    skipped so an undefined evaluation does not break the curve.
    """

    series: List[Tuple[int, float]] = []
    for report in reports:
        record = report.to_dict() if isinstance(report, EvalReport) else report
        value = _to_float(record.get(metric))
        step = _to_float(record.get("step"))
        if value is None or step is None:
            continue
        series.append((int(step), value))
    return series


def plot_eval_history(
    reports: Sequence[EvalReport | Mapping[str, object]],
    output_path: str | Path,
    *,
    metrics: Sequence[str] = PLOTTED_METRICS,
    title: str = "Dev metrics",
) -> Path:
    if not reports:
        raise ValueError("No reports supplied for plotting")

    figure, axis = plt.subplots(figsize=(7, 4))
    for metric in metrics:
        series = collect_metric_series(reports, metric)
        if series:
            steps, values = zip(*series)
            axis.plot(steps, values, marker="o", markersize=3, label=metric)
    axis.set_xlabel("step")
    axis.set_ylim(0.0, 1.0)
    axis.set_title(title)
    axis.grid(alpha=0.3)
    axis.legend(loc="lower right")

    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure.tight_layout()
    figure.savefig(path, dpi=120)
    plt.close(figure)
    return path


def _to_float(value: object) -> float | None:
    if value is None:
        return None
    try:
        number = float(value)
    except (TypeError, ValueError):
        return None
    return None if math.isnan(number) else number


__all__ = ["collect_metric_series", "plot_eval_history"]
