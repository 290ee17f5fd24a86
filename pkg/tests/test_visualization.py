import pytest

from polyrec.models import EvalReport
from polyrec.visualization import collect_metric_series, plot_eval_history


def test_collect_metric_series_filters_invalid_values():
    records = [
        {"step": 0, "auc": 0.5},
        {"step": "10", "auc": "0.61"},
        {"step": 20, "auc": None},
        {"step": 30, "auc": float("nan")},
        {"step": 40, "auc": "invalid"},
        EvalReport(auc=0.7, mrr=0.4, ndcg5=0.4, ndcg10=0.5, n_impressions=3, step=50),
    ]

    series = collect_metric_series(records, "auc")
    assert series == [(0, 0.5), (10, 0.61), (50, 0.7)]


def test_plot_eval_history_writes_png(tmp_path):
    reports = [
        EvalReport(auc=0.5, mrr=0.3, ndcg5=0.3, ndcg10=0.4, n_impressions=3, step=0),
        EvalReport(auc=0.8, mrr=0.6, ndcg5=0.6, ndcg10=0.7, n_impressions=3, step=4),
    ]
    path = plot_eval_history(reports, tmp_path / "plots" / "eval.png")
    assert path.read_bytes()[:4] == b"\x89PNG"


def test_plot_eval_history_requires_reports(tmp_path):
    with pytest.raises(ValueError):
        plot_eval_history([], tmp_path / "eval.png")
