"""
Responder status sidecar.

Read-only FastAPI app exposing the running responder's state:
- GET /health                 - Liveness
- GET /status                 - Model summary and session counters
- GET /sessions               - Recent sessions, newest first
- GET /sessions/{session_id}  - One session with its transcript summary

Runs under uvicorn on a background thread next to the TCP server.
"""
import logging
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .models import SessionRegistry

logger = logging.getLogger(__name__)


@dataclass
class ResponderState:
    """What the sidecar reports; shared with the server thread."""
    registry: SessionRegistry = field(default_factory=SessionRegistry)
    model_summary: Dict[str, Any] = field(default_factory=dict)
    listen_address: str = ""
    config: Dict[str, Any] = field(default_factory=dict)


# Global state instance
_state: Optional[ResponderState] = None


def bind_state(state: Optional[ResponderState]) -> None:
    global _state
    _state = state


def get_state() -> ResponderState:
    """Get the bound responder state"""
    if _state is None:
        raise HTTPException(status_code=503, detail="Responder not initialized")
    return _state


class StatusResponse(BaseModel):
    """Response for responder status"""
    listen_address: str
    uptime_seconds: float
    model: Dict[str, Any]
    sessions: Dict[str, int]
    total_sessions: int
    failed_sessions: int


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Handle startup and shutdown"""
    logger.info("[STATUS] sidecar starting")
    yield
    logger.info("[STATUS] sidecar stopped")


app = FastAPI(
    title="hefuzz responder status",
    description="Read-only view of a running hefuzz responder",
    version="0.1.0",
    lifespan=lifespan,
)


@app.get("/health")
async def health_check():
    return {"status": "ok", "ready": _state is not None}


@app.get("/status", response_model=StatusResponse)
async def get_status():
    state = get_state()
    registry = state.registry
    return StatusResponse(
        listen_address=state.listen_address,
        uptime_seconds=(datetime.now(timezone.utc) - registry.started_at).total_seconds(),
        model=state.model_summary,
        sessions=registry.counts(),
        total_sessions=registry.total_sessions,
        failed_sessions=registry.failed_sessions,
    )


@app.get("/sessions")
async def list_sessions(limit: int = 20) -> List[Dict[str, Any]]:
    return [s.to_dict() for s in get_state().registry.recent(limit)]


@app.get("/sessions/{session_id}")
async def get_session(session_id: str):
    record = get_state().registry.get(session_id)
    if record is None:
        raise HTTPException(status_code=404, detail=f"Session not found: {session_id}")
    return record.to_dict()


class BackgroundService:
    """uvicorn server on a daemon thread, stoppable from the owner."""

    def __init__(self, host: str, port: int):
        import uvicorn
        self._server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning"))
        self._thread = threading.Thread(target=self._server.run, name="status-sidecar", daemon=True)
        self.host = host
        self.port = port

    def start(self) -> "BackgroundService":
        self._thread.start()
        logger.info(f"[STATUS] listening on http://{self.host}:{self.port}")
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=5.0)
