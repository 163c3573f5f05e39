import pytest
from fastapi.testclient import TestClient

from src.hefuzz.models import SessionRegistry, SessionStatus
from src.hefuzz.protocol import SessionOutcome
from src.hefuzz.service import ResponderState, app, bind_state
from src.hefuzz.transcript import TranscriptLog


@pytest.fixture
def client():
    with TestClient(app) as c:
        yield c
    bind_state(None)


@pytest.fixture
def registry():
    registry = SessionRegistry()
    done = registry.open("127.0.0.1:5000")
    registry.finish(done, SessionOutcome(session_id="x", batch_size=8, columns_sent=12,
                                         transcript=TranscriptLog()))
    failed = registry.open("127.0.0.1:5001")
    registry.finish(failed, SessionOutcome(session_id="y", error="frame_corrupt"))
    probe = registry.open("127.0.0.1:5002")
    registry.finish(probe, SessionOutcome(session_id="z", probe=True))
    return registry


def test_health_before_binding(client):
    bind_state(None)
    assert client.get("/health").json() == {"status": "ok", "ready": False}
    assert client.get("/status").status_code == 503


def test_status(client, registry):
    bind_state(ResponderState(registry=registry, model_summary={"k": 20}, listen_address="127.0.0.1:9460"))
    assert client.get("/health").json()["ready"] is True
    body = client.get("/status").json()
    assert body["listen_address"] == "127.0.0.1:9460"
    assert body["model"] == {"k": 20}
    assert body["total_sessions"] == 3
    assert body["failed_sessions"] == 1
    assert body["sessions"][SessionStatus.COMPLETED.value] == 1
    assert body["sessions"][SessionStatus.PROBE.value] == 1


def test_sessions(client, registry):
    bind_state(ResponderState(registry=registry))
    listed = client.get("/sessions", params={"limit": 2}).json()
    assert [s["peer"] for s in listed] == ["127.0.0.1:5002", "127.0.0.1:5001"]
    one = client.get(f"/sessions/{listed[1]['session_id']}").json()
    assert one["status"] == "failed"
    assert one["error_code"] == "frame_corrupt"
    assert client.get("/sessions/nope").status_code == 404


def test_registry_records_outcomes(registry):
    completed = registry.recent(3)[-1]
    assert completed.status is SessionStatus.COMPLETED
    assert completed.columns_sent == 12
    assert completed.transcript_summary["frames"] == 0
    assert completed.duration_seconds is not None


def test_registry_history_is_bounded():
    registry = SessionRegistry(history=2)
    for _ in range(3):
        registry.open()
    assert len(registry.recent(10)) == 2
    assert registry.total_sessions == 3


def test_timestamps_are_utc(registry):
    record = registry.recent(1)[0]
    assert record.created_at.tzinfo is not None
    assert record.created_at.utcoffset().total_seconds() == 0
    assert record.to_dict()["created_at"].endswith("+00:00")
    assert record.duration_seconds >= 0
    assert registry.started_at.tzinfo is not None
