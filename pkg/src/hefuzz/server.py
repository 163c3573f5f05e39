"""
Responder TCP server.

Accepts querier connections one at a time and runs one protocol session per
connection with a fresh Responder. A failed session is answered with an
Error frame and closed; the server keeps serving until SIGTERM/SIGINT.
"""
import logging
import signal
import threading
from pathlib import Path
from typing import Optional

from .clustering import ClusterModel
from .config import HefuzzConfig
from .models import SessionRegistry, SessionStatus
from .protocol import Responder, SessionOutcome, serve_session
from .service import BackgroundService, ResponderState, bind_state
from .transport import TcpListener

logger = logging.getLogger(__name__)


class ResponderServer:
    """Sequential session loop around a loaded ClusterModel."""

    def __init__(self, model: ClusterModel, config: HefuzzConfig,
                 registry: Optional[SessionRegistry] = None, transcript_dir: Optional[Path] = None):
        self.model = model
        self.config = config
        self.registry = registry or SessionRegistry()
        self.transcript_dir = transcript_dir
        self._stop = threading.Event()
        self._listener: Optional[TcpListener] = None
        self._sidecar: Optional[BackgroundService] = None
        self.ready = threading.Event()

    @property
    def address(self):
        return self._listener.address if self._listener else None

    def bind(self) -> None:
        """Open the listening socket (BindFailure on error)."""
        channel = self.config.channel
        self._listener = TcpListener(channel.host, channel.port, timeout=channel.timeout)
        host, port = self._listener.address
        logger.info(f"[RESPONDER] listening on {host}:{port} (k={self.model.k}, M={self.model.max_cluster_size})")

        state = ResponderState(
            registry=self.registry,
            model_summary=self.model.summary(),
            listen_address=f"{host}:{port}",
            config=self.config.to_dict(),
        )
        bind_state(state)
        if self.config.status.port is not None:
            self._sidecar = BackgroundService(self.config.status.host, self.config.status.port).start()

    def stop(self, *_args) -> None:
        if not self._stop.is_set():
            logger.info("[RESPONDER] shutdown requested")
        self._stop.set()

    def _install_signal_handlers(self) -> None:
        if threading.current_thread() is not threading.main_thread():
            return
        signal.signal(signal.SIGTERM, self.stop)
        signal.signal(signal.SIGINT, self.stop)

    def serve_one(self) -> bool:
        """Wait up to one accept interval and serve a session if a querier connects."""
        assert self._listener is not None
        channel = self._listener.accept()
        if channel is None:
            return False

        record = self.registry.open(peer=channel.peer)
        record.status = SessionStatus.RUNNING
        logger.info(f"[RESPONDER] session {record.session_id} from {record.peer}")
        try:
            responder = Responder(self.model, self.config.encoding, self.config.protocol)
            outcome = serve_session(channel, responder)
        except Exception as e:
            logger.exception(f"[RESPONDER] session {record.session_id} crashed: {e}")
            outcome = SessionOutcome(session_id=record.session_id, error="internal", transcript=channel.transcript)
        finally:
            channel.close()
        self.registry.finish(record, outcome)

        if self.transcript_dir is not None and not outcome.probe:
            self.transcript_dir.mkdir(parents=True, exist_ok=True)
            channel.transcript.to_csv(self.transcript_dir / f"session_{record.session_id}.csv")
        return True

    def serve_forever(self) -> int:
        if self._listener is None:
            self.bind()
        self._install_signal_handlers()
        self.ready.set()
        try:
            while not self._stop.is_set():
                self.serve_one()
        finally:
            self.close()
        logger.info(f"[RESPONDER] served {self.registry.total_sessions} sessions "
                    f"({self.registry.failed_sessions} failed)")
        return 0

    def close(self) -> None:
        if self._listener is not None:
            self._listener.close()
            self._listener = None
        if self._sidecar is not None:
            self._sidecar.stop()
            self._sidecar = None
        bind_state(None)
