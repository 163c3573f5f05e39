import csv
import json

from src.hefuzz.transcript import (
    Direction,
    Phase,
    TranscriptLog,
    linear_response_bytes,
    reduction_factor,
    report,
    write_summary,
)
from src.hefuzz.wire import MessageType

UP = Direction.QUERIER_TO_RESPONDER
DOWN = Direction.RESPONDER_TO_QUERIER


def session(columns, score_bytes=1000):
    log = TranscriptLog()
    log.record(UP, MessageType.SETUP, 50)
    log.record(DOWN, MessageType.SETUP, 80)
    log.set_phase(Phase.CENTROID)
    log.record(UP, MessageType.CENTROID_QUERY, 5000)
    log.record(DOWN, MessageType.CENTROID_SCORES, 2000)
    log.set_phase(Phase.COLUMN)
    log.record(UP, MessageType.COLUMN_QUERY, 3000)
    for _ in range(columns):
        log.record(DOWN, MessageType.COLUMN_SCORE, score_bytes)
    log.set_phase(Phase.CLOSE)
    log.record(UP, MessageType.DONE, 7)
    return log


def test_totals_by_direction_and_phase():
    log = session(3)
    assert log.totals() == {UP.value: 8057, DOWN.value: 5080}
    phases = log.phase_totals()
    assert phases["column"] == {UP.value: 3000, DOWN.value: 3000}
    assert phases["close"][UP.value] == 7
    assert [e.seq for e in log.entries] == list(range(len(log.entries)))


def test_select_and_shape():
    log = session(2)
    assert len(log.select(MessageType.COLUMN_SCORE)) == 2
    assert len(log.select(direction=UP)) == 4
    assert log.shape(DOWN)[-1] == (MessageType.COLUMN_SCORE, 1000)


def test_csv(tmp_path):
    path = tmp_path / "session.csv"
    session(1).to_csv(path)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["seq", "direction", "msg_type", "bytes", "millis"]
    assert rows[0]["direction"] == "querier->responder"
    assert rows[-1]["msg_type"] == "DONE"


def test_report_against_estimate():
    cost = report(session(4), num_records=100)
    assert cost.columns == 4
    assert cost.column_score_bytes == 1000
    assert cost.response_bytes == 4000
    assert cost.constant_column_frames
    assert cost.linear_response_bytes == linear_response_bytes(100, 1000) == 100000
    assert cost.reduction_factor == 25.0


def test_report_against_baseline():
    cost = report(session(5), scenario="k10", baseline=session(50))
    assert cost.scenario == "k10"
    assert cost.reduction_factor == 10.0


def test_report_flags_uneven_scores():
    log = session(2)
    log.record(DOWN, MessageType.COLUMN_SCORE, 999)
    assert not report(log).constant_column_frames


def test_reduction_factor_without_scores():
    assert reduction_factor(100, 0) == float("inf")


def test_write_summary(tmp_path):
    log = session(2)
    path = tmp_path / "summary.json"
    write_summary(path, log, report(log, num_records=10), config={"tau": 0.9})
    document = json.loads(path.read_text())
    assert document["transcript"]["frames"] == len(log.entries)
    assert document["reduction_factor"] == 5.0
    assert document["config"] == {"tau": 0.9}
