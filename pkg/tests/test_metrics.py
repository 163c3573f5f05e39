import pytest

from src.hefuzz.errors import LengthMismatch
from src.hefuzz.metrics import MetricsReport, evaluate, evaluate_links, recall_non_increasing
from src.hefuzz.protocol import MatchVerdict


def test_rates():
    report = MetricsReport(tp=8, fp=2, tn=5, fn=5)
    assert report.precision == pytest.approx(0.8)
    assert report.recall == pytest.approx(8 / 13)
    assert report.accuracy == pytest.approx(13 / 20)
    assert report.f1 == pytest.approx(2 * 0.8 * (8 / 13) / (0.8 + 8 / 13))
    assert report.to_dict()["tp"] == 8


def test_undefined_ratios_are_zero():
    report = MetricsReport(tp=0, fp=0, tn=0, fn=0)
    assert (report.precision, report.recall, report.f1, report.accuracy) == (0.0, 0.0, 0.0, 0.0)


def test_evaluate_accepts_verdicts_and_bools():
    verdicts = [MatchVerdict(query_id=i, matched=m, columns_consumed=1) for i, m in enumerate([True, False, True])]
    assert evaluate(verdicts, [True, True, False]) == MetricsReport(tp=1, fp=1, tn=0, fn=1)
    assert evaluate([True, False], [True, False]) == MetricsReport(tp=1, fp=0, tn=1, fn=0)
    with pytest.raises(LengthMismatch):
        evaluate([True], [True, False])


def test_links_count_wrong_records_as_false_positives():
    flagged = [[3], [4, 3], [], [7], []]
    sources = [3, 3, 5, -1, -1]
    assert evaluate_links(flagged, sources) == MetricsReport(tp=2, fp=2, tn=1, fn=1)
    with pytest.raises(LengthMismatch):
        evaluate_links([[1]], [1, 2])


def test_link_and_query_totals_differ():
    flagged = [[3], [4, 3], [], [7], []]
    sources = [3, 3, 5, -1, -1]
    links = evaluate_links(flagged, sources)
    queries = evaluate([bool(f) for f in flagged], [s >= 0 for s in sources])
    assert queries == MetricsReport(tp=2, fp=1, tn=1, fn=1)
    assert queries.total == len(sources)
    assert links.total == len(sources) + 1
    assert links.precision < queries.precision


def test_recall_trend():
    reports = [MetricsReport(9, 0, 0, 1), MetricsReport(8, 0, 0, 2), MetricsReport(8, 0, 0, 2)]
    assert recall_non_increasing(reports)
    assert not recall_non_increasing(list(reversed(reports)) + [MetricsReport(10, 0, 0, 0)])
    assert recall_non_increasing([MetricsReport(8, 0, 0, 2), MetricsReport(85, 0, 0, 15)], tolerance=0.05)
