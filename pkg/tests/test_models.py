import pytest

from polyrec.models import ContentItem, EvalReport, Impression, UserHistory


def test_impression_views():
    impression = Impression("1", "U1", (("N1", 1), ("N2", 0), ("N3", 1)))
    assert impression.candidate_ids == ["N1", "N2", "N3"]
    assert impression.labels == [1, 0, 1]
    assert impression.positives == ["N1", "N3"]
    assert impression.negatives == ["N2"]


def test_impression_validation():
    with pytest.raises(ValueError):
        Impression("1", "U1", ())
    with pytest.raises(ValueError):
        Impression("1", "U1", (("N1", 2),))


def test_content_item_needs_id_and_title():
    with pytest.raises(ValueError):
        ContentItem("", "Title")
    with pytest.raises(ValueError):
        ContentItem("N1", "")
    assert ContentItem("N1", "Title").abstract == ""


def test_user_history_sessions_must_cover_the_history():
    UserHistory("U1", ("N2", "N1"), (("N2",), ("N1",)))
    with pytest.raises(ValueError):
        UserHistory("U1", ("N2", "N1"), (("N1", "N2"),))


def test_eval_report_serializes_extras_and_progress_line():
    report = EvalReport(auc=0.71234, mrr=0.3, ndcg5=0.35, ndcg10=0.4, n_impressions=8, step=12, extra={"unscored": 1})
    data = report.to_dict()
    assert data["step"] == 12
    assert data["unscored"] == 1
    assert report.progress_line() == "12 0.7123 0.3000 0.3500 0.4000"
