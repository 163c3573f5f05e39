"""
Frame format shared by both parties.

    frame   := length u32 | msg_type u8 | payload
    payload := count u16 | (size u32 | blob) * count

``length`` counts payload bytes only. Blobs are engine serializations or a
UTF-8 JSON document for the control messages.
"""
import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Dict, List, Sequence, Tuple

from .errors import FrameCorrupt

FRAME_HEADER = struct.Struct("<IB")
_COUNT = struct.Struct("<H")
_SIZE = struct.Struct("<I")
_COLUMN = struct.Struct("<I")

MAX_FRAME = 2 ** 31 - 1
MAX_BLOBS = 0xFFFF


class MessageType(IntEnum):
    SETUP = 0
    CENTROID_QUERY = 1
    CENTROID_SCORES = 2
    COLUMN_QUERY = 3
    COLUMN_SCORE = 4
    DONE = 5
    ERROR = 6


@dataclass(frozen=True)
class Frame:
    msg_type: MessageType
    payload: bytes = b""

    @property
    def size(self) -> int:
        """Bytes on the wire, header included."""
        return FRAME_HEADER.size + len(self.payload)

    def encode(self) -> bytes:
        return encode_frame(self.msg_type, self.payload)


def encode_frame(msg_type: MessageType, payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise FrameCorrupt(f"payload of {len(payload)} bytes exceeds the frame limit")
    return FRAME_HEADER.pack(len(payload), int(msg_type)) + payload


def decode_header(header: bytes) -> Tuple[int, MessageType]:
    if len(header) != FRAME_HEADER.size:
        raise FrameCorrupt(f"frame header of {len(header)} bytes")
    length, raw_type = FRAME_HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameCorrupt(f"frame length {length} exceeds the limit")
    try:
        return length, MessageType(raw_type)
    except ValueError:
        raise FrameCorrupt(f"unknown message type {raw_type}") from None


def decode_frame(data: bytes) -> Frame:
    """Parse exactly one complete frame."""
    length, msg_type = decode_header(data[:FRAME_HEADER.size])
    payload = data[FRAME_HEADER.size:]
    if len(payload) != length:
        raise FrameCorrupt(f"frame announces {length} payload bytes, carries {len(payload)}")
    return Frame(msg_type, payload)


# ============== payloads ==============

def pack_blobs(blobs: Sequence[bytes]) -> bytes:
    if len(blobs) > MAX_BLOBS:
        raise FrameCorrupt(f"{len(blobs)} blobs exceed the per-frame count")
    parts = [_COUNT.pack(len(blobs))]
    for blob in blobs:
        parts.append(_SIZE.pack(len(blob)))
        parts.append(blob)
    return b"".join(parts)


def unpack_blobs(payload: bytes) -> List[bytes]:
    if len(payload) < _COUNT.size:
        raise FrameCorrupt("payload too short for a blob count")
    (count,) = _COUNT.unpack_from(payload, 0)
    offset = _COUNT.size
    blobs = []
    for _ in range(count):
        if offset + _SIZE.size > len(payload):
            raise FrameCorrupt("truncated blob header")
        (size,) = _SIZE.unpack_from(payload, offset)
        offset += _SIZE.size
        if offset + size > len(payload):
            raise FrameCorrupt("truncated blob body")
        blobs.append(payload[offset:offset + size])
        offset += size
    if offset != len(payload):
        raise FrameCorrupt(f"{len(payload) - offset} trailing payload bytes")
    return blobs


def pack_json(document: Dict[str, Any], *extra: bytes) -> bytes:
    """A JSON control document followed by optional binary blobs."""
    return pack_blobs([json.dumps(document, sort_keys=True).encode("utf-8"), *extra])


def unpack_json(payload: bytes) -> Tuple[Dict[str, Any], List[bytes]]:
    blobs = unpack_blobs(payload)
    if not blobs:
        raise FrameCorrupt("control payload without a JSON document")
    try:
        document = json.loads(blobs[0].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FrameCorrupt(f"bad control document: {e}") from e
    if not isinstance(document, dict):
        raise FrameCorrupt("control document is not an object")
    return document, blobs[1:]


def pack_column_score(column: int, blob: bytes) -> bytes:
    return pack_blobs([_COLUMN.pack(column), blob])


def unpack_column_score(payload: bytes) -> Tuple[int, bytes]:
    blobs = unpack_blobs(payload)
    if len(blobs) != 2 or len(blobs[0]) != _COLUMN.size:
        raise FrameCorrupt("column score needs an index and one ciphertext")
    return _COLUMN.unpack(blobs[0])[0], blobs[1]


def error_frame(code: str, message: str) -> Frame:
    return Frame(MessageType.ERROR, pack_json({"code": code, "message": message}))


def parse_error(payload: bytes) -> Tuple[str, str]:
    document, _ = unpack_json(payload)
    return str(document.get("code", "unknown")), str(document.get("message", ""))


def done_frame() -> Frame:
    return Frame(MessageType.DONE, pack_blobs([]))
