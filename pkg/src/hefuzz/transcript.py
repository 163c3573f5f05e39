"""
Byte and time accounting for protocol sessions.

Every frame sent or received through a channel is appended to a
TranscriptLog with its direction, message type, wire size and the phase
the protocol was in. The log exports to CSV and to a JSON summary, and
``report`` turns it into the per-phase cost figures used by the benches.
"""
import csv
import json
import threading
import time
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .wire import MessageType


class Direction(str, Enum):
    QUERIER_TO_RESPONDER = "querier->responder"
    RESPONDER_TO_QUERIER = "responder->querier"


class Phase(str, Enum):
    SETUP = "setup"
    CENTROID = "centroid"   # query upload, centroid scores, cluster selection
    COLUMN = "column"       # indicator upload, masked column scores
    CLOSE = "close"


@dataclass(frozen=True)
class TranscriptEntry:
    seq: int
    direction: Direction
    msg_type: MessageType
    bytes: int
    wall_time: float
    phase: Phase

    def to_row(self) -> Dict[str, Any]:
        return {
            "seq": self.seq,
            "direction": self.direction.value,
            "msg_type": self.msg_type.name,
            "bytes": self.bytes,
            "millis": round(self.wall_time * 1000.0, 3),
        }


class TranscriptLog:
    """Append-only, thread-safe list of frame records for one session endpoint."""

    CSV_COLUMNS = ("seq", "direction", "msg_type", "bytes", "millis")

    def __init__(self) -> None:
        self.entries: List[TranscriptEntry] = []
        self.phase = Phase.SETUP
        self._start = time.monotonic()
        self._lock = threading.Lock()

    def set_phase(self, phase: Phase) -> None:
        self.phase = phase

    def record(self, direction: Direction, msg_type: MessageType, size: int) -> TranscriptEntry:
        with self._lock:
            entry = TranscriptEntry(
                seq=len(self.entries),
                direction=direction,
                msg_type=msg_type,
                bytes=size,
                wall_time=time.monotonic() - self._start,
                phase=self.phase,
            )
            self.entries.append(entry)
            return entry

    def totals(self) -> Dict[str, int]:
        out = {d.value: 0 for d in Direction}
        for e in self.entries:
            out[e.direction.value] += e.bytes
        return out

    def phase_totals(self) -> Dict[str, Dict[str, int]]:
        out = {p.value: {d.value: 0 for d in Direction} for p in Phase}
        for e in self.entries:
            out[e.phase.value][e.direction.value] += e.bytes
        return out

    def phase_durations(self) -> Dict[str, float]:
        """Seconds between the first and last frame of each phase."""
        spans: Dict[str, List[float]] = {}
        for e in self.entries:
            spans.setdefault(e.phase.value, []).append(e.wall_time)
        return {phase: max(times) - min(times) for phase, times in spans.items()}

    def select(self, msg_type: Optional[MessageType] = None, direction: Optional[Direction] = None) -> List[TranscriptEntry]:
        return [
            e for e in self.entries
            if (msg_type is None or e.msg_type == msg_type) and (direction is None or e.direction == direction)
        ]

    def shape(self, direction: Optional[Direction] = None) -> List[tuple]:
        """(msg_type, bytes) sequence, the timing-free view of the session."""
        return [(e.msg_type, e.bytes) for e in self.select(direction=direction)]

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=self.CSV_COLUMNS)
            writer.writeheader()
            for e in self.entries:
                writer.writerow(e.to_row())

    def summary(self) -> Dict[str, Any]:
        return {
            "frames": len(self.entries),
            "totals": self.totals(),
            "phase_totals": self.phase_totals(),
            "phase_seconds": self.phase_durations(),
        }


@dataclass
class CostSummary:
    """Per-phase cost figures of one session, plus the clustering reduction factor when a baseline is known."""
    scenario: str
    phase_totals: Dict[str, Dict[str, int]]
    columns: int
    column_score_bytes: int
    response_bytes: int
    constant_column_frames: bool
    first_round_seconds: float
    seconds_per_column: float
    linear_response_bytes: Optional[int] = None
    reduction_factor: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def linear_response_bytes(num_records: int, per_score_bytes: int) -> int:
    """Response bytes of the no-clustering baseline: one score frame per responder record."""
    return num_records * per_score_bytes


def reduction_factor(linear_bytes: int, clustered_bytes: int) -> float:
    return linear_bytes / clustered_bytes if clustered_bytes else float("inf")


def report(
    transcript: TranscriptLog,
    scenario: str = "clustered",
    baseline: Optional[TranscriptLog] = None,
    num_records: Optional[int] = None,
) -> CostSummary:
    """
    Summarize a completed session.

    The reduction factor compares column-phase response bytes against a
    linear-mode baseline, taken from ``baseline`` when given and otherwise
    estimated as ``num_records`` score frames.
    """
    scores = transcript.select(MessageType.COLUMN_SCORE, Direction.RESPONDER_TO_QUERIER)
    sizes = {e.bytes for e in scores}
    per_score = scores[0].bytes if scores else 0
    response = sum(e.bytes for e in scores)

    durations = transcript.phase_durations()
    centroid_seconds = durations.get(Phase.SETUP.value, 0.0) + durations.get(Phase.CENTROID.value, 0.0)
    column_seconds = durations.get(Phase.COLUMN.value, 0.0)

    linear: Optional[int] = None
    if baseline is not None:
        linear = sum(e.bytes for e in baseline.select(MessageType.COLUMN_SCORE, Direction.RESPONDER_TO_QUERIER))
    elif num_records is not None:
        linear = linear_response_bytes(num_records, per_score)

    return CostSummary(
        scenario=scenario,
        phase_totals=transcript.phase_totals(),
        columns=len(scores),
        column_score_bytes=per_score,
        response_bytes=response,
        constant_column_frames=len(sizes) <= 1,
        first_round_seconds=centroid_seconds,
        seconds_per_column=column_seconds / len(scores) if scores else 0.0,
        linear_response_bytes=linear,
        reduction_factor=reduction_factor(linear, response) if linear is not None else None,
    )


def write_summary(path: Union[str, Path], transcript: TranscriptLog, cost: Optional[CostSummary] = None,
                  config: Optional[Dict[str, Any]] = None) -> None:
    document: Dict[str, Any] = {"transcript": transcript.summary()}
    if cost is not None:
        document["cost"] = cost.to_dict()
        document["reduction_factor"] = cost.reduction_factor
    if config is not None:
        document["config"] = config
    Path(path).write_text(json.dumps(document, indent=2, default=str), encoding="utf-8")
