"""
Channels carrying frames between the two parties.

Two implementations share one interface: an in-process queue pair for tests
and benches, and TCP sockets for ``serve`` / ``query``. Every frame that
crosses a channel is recorded in the endpoint's TranscriptLog.
"""
import logging
import queue
import select
import socket
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

from .errors import BindFailure, FrameCorrupt, TransportFailure
from .transcript import Direction, TranscriptLog
from .wire import FRAME_HEADER, Frame, decode_header

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_SEC = 600.0


class ChannelMode(str, Enum):
    MEMORY = "memory"
    TCP = "tcp"


class Role(str, Enum):
    QUERIER = "querier"
    RESPONDER = "responder"

    @property
    def outbound(self) -> Direction:
        return Direction.QUERIER_TO_RESPONDER if self is Role.QUERIER else Direction.RESPONDER_TO_QUERIER

    @property
    def inbound(self) -> Direction:
        return Direction.RESPONDER_TO_QUERIER if self is Role.QUERIER else Direction.QUERIER_TO_RESPONDER


@dataclass(frozen=True)
class ChannelConfig:
    mode: ChannelMode = ChannelMode.TCP
    host: str = "127.0.0.1"
    port: int = 9460
    compress: bool = False
    timeout: float = DEFAULT_TIMEOUT_SEC

    @property
    def address(self) -> Tuple[str, int]:
        return self.host, self.port

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "host": self.host, "port": self.port,
                "compress": self.compress, "timeout": self.timeout}


class Channel:
    """Base channel: framing, logging and the send lock. Subclasses move bytes."""

    def __init__(self, role: Role, transcript: Optional[TranscriptLog] = None, timeout: float = DEFAULT_TIMEOUT_SEC):
        self.role = role
        self.transcript = transcript if transcript is not None else TranscriptLog()
        self.timeout = timeout
        self._send_lock = threading.Lock()
        self._closed = False

    def send(self, frame: Frame) -> None:
        data = frame.encode()
        with self._send_lock:
            if self._closed:
                raise TransportFailure("send on a closed channel")
            self._write(data)
            self.transcript.record(self.role.outbound, frame.msg_type, len(data))

    def recv(self, timeout: Optional[float] = None) -> Frame:
        frame = self._read(self.timeout if timeout is None else timeout)
        self.transcript.record(self.role.inbound, frame.msg_type, frame.size)
        return frame

    def poll(self) -> bool:
        """True if a frame can be read without blocking."""
        raise NotImplementedError

    def close(self) -> None:
        self._closed = True

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def _read(self, timeout: float) -> Frame:
        raise NotImplementedError

    def __enter__(self) -> "Channel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ============== in-process ==============

_CLOSED = object()


class MemoryChannel(Channel):
    """One end of an in-process queue pair; frames travel as encoded bytes."""

    def __init__(self, role: Role, inbox: "queue.Queue", outbox: "queue.Queue",
                 transcript: Optional[TranscriptLog] = None, timeout: float = DEFAULT_TIMEOUT_SEC):
        super().__init__(role, transcript, timeout)
        self._inbox = inbox
        self._outbox = outbox

    def _write(self, data: bytes) -> None:
        self._outbox.put(data)

    def _read(self, timeout: float) -> Frame:
        try:
            data = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportFailure(f"no frame within {timeout:.1f}s") from None
        if data is _CLOSED:
            raise TransportFailure("peer closed the channel")
        length, msg_type = decode_header(data[:FRAME_HEADER.size])
        payload = data[FRAME_HEADER.size:]
        if len(payload) != length:
            raise FrameCorrupt(f"frame announces {length} bytes, carries {len(payload)}")
        return Frame(msg_type, payload)

    def poll(self) -> bool:
        return not self._inbox.empty()

    def close(self) -> None:
        if not self._closed:
            super().close()
            self._outbox.put(_CLOSED)


def memory_pair(timeout: float = DEFAULT_TIMEOUT_SEC) -> Tuple[MemoryChannel, MemoryChannel]:
    """(querier end, responder end), each with its own transcript."""
    to_responder: "queue.Queue" = queue.Queue()
    to_querier: "queue.Queue" = queue.Queue()
    querier = MemoryChannel(Role.QUERIER, inbox=to_querier, outbox=to_responder, timeout=timeout)
    responder = MemoryChannel(Role.RESPONDER, inbox=to_responder, outbox=to_querier, timeout=timeout)
    return querier, responder


# ============== TCP ==============

class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, role: Role,
                 transcript: Optional[TranscriptLog] = None, timeout: float = DEFAULT_TIMEOUT_SEC):
        super().__init__(role, transcript, timeout)
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @property
    def peer(self) -> str:
        try:
            host, port = self._sock.getpeername()[:2]
            return f"{host}:{port}"
        except OSError:
            return "?"

    def _write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as e:
            raise TransportFailure(f"send failed: {e}") from e

    def _read_exact(self, count: int, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        chunks = []
        remaining = count
        try:
            while remaining:
                chunk = self._sock.recv(min(remaining, 1 << 20))
                if not chunk:
                    raise TransportFailure("peer closed the connection")
                chunks.append(chunk)
                remaining -= len(chunk)
        except socket.timeout:
            raise TransportFailure(f"no data within {timeout:.1f}s") from None
        except OSError as e:
            raise TransportFailure(f"recv failed: {e}") from e
        return b"".join(chunks)

    def _read(self, timeout: float) -> Frame:
        length, msg_type = decode_header(self._read_exact(FRAME_HEADER.size, timeout))
        return Frame(msg_type, self._read_exact(length, timeout) if length else b"")

    def poll(self) -> bool:
        try:
            readable, _, _ = select.select([self._sock], [], [], 0)
        except (OSError, ValueError):
            return False
        return bool(readable)

    def close(self) -> None:
        if self._closed:
            return
        super().close()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect(config: ChannelConfig, transcript: Optional[TranscriptLog] = None) -> TcpChannel:
    try:
        sock = socket.create_connection(config.address, timeout=config.timeout)
    except OSError as e:
        raise TransportFailure(f"cannot reach responder at {config.host}:{config.port}: {e}") from e
    return TcpChannel(sock, Role.QUERIER, transcript, timeout=config.timeout)


class TcpListener:
    """Accepts querier connections one at a time."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT_SEC):
        self.timeout = timeout
        try:
            self._sock = socket.create_server((host, port), reuse_port=False)
        except OSError as e:
            raise BindFailure(f"cannot bind {host}:{port}: {e}") from e
        self._sock.settimeout(1.0)

    @property
    def address(self) -> Tuple[str, int]:
        host, port = self._sock.getsockname()[:2]
        return host, port

    def accept(self) -> Optional[TcpChannel]:
        """Next connection, or None when the accept wait (1 s) elapses."""
        try:
            sock, _ = self._sock.accept()
        except socket.timeout:
            return None
        sock.settimeout(None)
        return TcpChannel(sock, Role.RESPONDER, timeout=self.timeout)

    def close(self) -> None:
        self._sock.close()
