"""
Session bookkeeping for the responder server.

SessionRecord tracks one querier connection through its lifecycle;
SessionRegistry keeps the most recent ones for the status sidecar.
"""
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Deque, Dict, List, Optional


def _now() -> datetime:
    return datetime.now(timezone.utc)


class SessionStatus(str, Enum):
    """Session lifecycle status"""
    ACCEPTED = "accepted"    # Connection open, no setup yet
    RUNNING = "running"      # Protocol in progress
    PROBE = "probe"          # Health probe answered
    COMPLETED = "completed"  # All requested columns served
    FAILED = "failed"        # Ended with an Error frame or a dead connection


@dataclass
class SessionRecord:
    """One querier connection as seen by the responder."""
    session_id: str
    peer: str = ""
    status: SessionStatus = SessionStatus.ACCEPTED

    # Outcome
    batch_size: int = 0
    columns_sent: int = 0
    stopped_early: bool = False
    error_code: Optional[str] = None
    transcript_summary: Optional[Dict[str, Any]] = None

    # Timestamps
    created_at: datetime = field(default_factory=_now)
    completed_at: Optional[datetime] = None

    @classmethod
    def create(cls, peer: str = "") -> "SessionRecord":
        """Create a new record with a generated ID"""
        return cls(session_id=uuid.uuid4().hex[:12], peer=peer)

    @property
    def duration_seconds(self) -> Optional[float]:
        if self.completed_at is None:
            return None
        return (self.completed_at - self.created_at).total_seconds()

    def to_dict(self) -> Dict[str, Any]:
        """Serialization for the status API"""
        return {
            "session_id": self.session_id,
            "peer": self.peer,
            "status": self.status.value,
            "batch_size": self.batch_size,
            "columns_sent": self.columns_sent,
            "stopped_early": self.stopped_early,
            "error_code": self.error_code,
            "transcript": self.transcript_summary,
            "created_at": self.created_at.isoformat(),
            "completed_at": self.completed_at.isoformat() if self.completed_at else None,
            "duration_seconds": self.duration_seconds,
        }


class SessionRegistry:
    """
    Thread-safe registry of recent sessions.

    The server thread writes, the status sidecar reads.
    """

    def __init__(self, history: int = 100):
        self._sessions: Deque[SessionRecord] = deque(maxlen=history)
        self._lock = threading.Lock()
        self.started_at = _now()
        self.total_sessions = 0
        self.failed_sessions = 0

    def open(self, peer: str = "") -> SessionRecord:
        record = SessionRecord.create(peer)
        with self._lock:
            self._sessions.append(record)
            self.total_sessions += 1
        return record

    def finish(self, record: SessionRecord, outcome: Any) -> None:
        """Copy a protocol SessionOutcome into ``record`` and close it."""
        with self._lock:
            record.batch_size = outcome.batch_size
            record.columns_sent = outcome.columns_sent
            record.stopped_early = outcome.stopped_early
            record.error_code = outcome.error
            record.transcript_summary = outcome.transcript.summary() if outcome.transcript is not None else None
            if outcome.error:
                record.status = SessionStatus.FAILED
                self.failed_sessions += 1
            elif outcome.probe:
                record.status = SessionStatus.PROBE
            else:
                record.status = SessionStatus.COMPLETED
            record.completed_at = _now()

    def get(self, session_id: str) -> Optional[SessionRecord]:
        with self._lock:
            return next((s for s in self._sessions if s.session_id == session_id), None)

    def recent(self, limit: int = 20) -> List[SessionRecord]:
        with self._lock:
            return list(self._sessions)[-limit:][::-1]

    def counts(self) -> Dict[str, int]:
        with self._lock:
            out = {s.value: 0 for s in SessionStatus}
            for record in self._sessions:
                out[record.status.value] += 1
            return out
