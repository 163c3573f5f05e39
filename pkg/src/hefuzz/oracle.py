"""
Plaintext oracle backend.

Implements the evaluator/decryptor interface of the CKKS engine on clear
float vectors, with the same level, scale and error rules. Used for
differential tests and to run the protocol state machines cheaply.
"""
import struct
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np

from .ckks import (
    CkksContext,
    HeParams,
    require_multipliable,
    require_same_level,
    require_same_scale,
    require_uniform,
)
from .errors import DimensionMismatch, FrameCorrupt, LevelMismatch, TooManySlots
from .noise import NoiseReport

ORACLE_MAGIC = b"ORCT"
_HEADER = struct.Struct("<4sHIBdH")


@dataclass(frozen=True)
class OracleCiphertext:
    values: np.ndarray = field(repr=False)
    level: int
    scale: float
    slots: int


class OracleEvaluator:
    """Exact arithmetic with ciphertext bookkeeping."""

    def __init__(self, params: HeParams):
        self.params = params
        self.context = CkksContext(params)

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    @property
    def top_level(self) -> int:
        return self.params.top_level

    def _make(self, values: np.ndarray, level: int, scale: float, slots: int) -> OracleCiphertext:
        values = np.array(values, dtype=np.float64)
        values.setflags(write=False)
        return OracleCiphertext(values=values, level=level, scale=scale, slots=slots)

    def _pad(self, values: Any) -> np.ndarray:
        vals = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if vals.shape[-1] > self.slot_count:
            raise TooManySlots(f"{vals.shape[-1]} values exceed {self.slot_count} slots")
        out = np.zeros(vals.shape[:-1] + (self.slot_count,))
        out[..., :vals.shape[-1]] = vals
        return out

    def encrypt(self, values: Any) -> OracleCiphertext:
        return self.encrypt_many(np.atleast_2d(np.asarray(values, dtype=np.float64)))[0]

    def encrypt_many(self, rows: Any) -> List[OracleCiphertext]:
        matrix = np.asarray(rows, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[None, :]
        padded = self._pad(matrix)
        return [self._make(row, self.top_level, self.params.scale, matrix.shape[1]) for row in padded]

    def add(self, a: OracleCiphertext, b: OracleCiphertext) -> OracleCiphertext:
        require_same_level(a, b)
        require_same_scale(a, b)
        return self._make(a.values + b.values, a.level, a.scale, max(a.slots, b.slots))

    def add_plain(self, ct: OracleCiphertext, value: Any) -> OracleCiphertext:
        if np.ndim(value) == 0:
            return self._make(ct.values + float(value), ct.level, ct.scale, ct.slots)
        vals = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return self._make(ct.values + self._pad(vals), ct.level, ct.scale, max(ct.slots, len(vals)))

    def mul_plain(self, ct: OracleCiphertext, value: Any) -> OracleCiphertext:
        require_multipliable(ct.level)
        if np.ndim(value) == 0:
            return self._make(ct.values * float(value), ct.level - 1, ct.scale, ct.slots)
        vals = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return self._make(ct.values * self._pad(vals), ct.level - 1, ct.scale, max(ct.slots, len(vals)))

    def mul(self, a: OracleCiphertext, b: OracleCiphertext) -> OracleCiphertext:
        require_same_level(a, b)
        require_multipliable(a.level)
        return self.dot_ct_ct([a], [b])

    def dot_ct_ct(self, cts_a: Sequence[OracleCiphertext], cts_b: Sequence[OracleCiphertext]) -> OracleCiphertext:
        if len(cts_a) != len(cts_b):
            raise DimensionMismatch(f"dot product of {len(cts_a)} and {len(cts_b)} ciphertexts")
        level, scale_a = require_uniform(cts_a)
        _, scale_b = require_uniform(cts_b)
        require_same_level(cts_a[0], cts_b[0])
        require_multipliable(level)
        total = np.sum([x.values * y.values for x, y in zip(cts_a, cts_b)], axis=0)
        scale = scale_a * scale_b / self.context.level_modulus(level)
        slots = max(max(c.slots for c in cts_a), max(c.slots for c in cts_b))
        return self._make(total, level - 1, scale, slots)

    def dot_ct_pt_many(self, cts: Sequence[OracleCiphertext], matrix: Any) -> List[OracleCiphertext]:
        mat = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if mat.shape[1] != len(cts):
            raise DimensionMismatch(f"{mat.shape[1]} plaintext values for {len(cts)} ciphertexts")
        level, scale = require_uniform(cts)
        require_multipliable(level)
        stacked = np.stack([c.values for c in cts])
        slots = max(c.slots for c in cts)
        return [self._make(row, level - 1, scale, slots) for row in mat @ stacked]

    def dot_ct_pt(self, cts: Sequence[OracleCiphertext], plains: Any) -> OracleCiphertext:
        vec = np.asarray(plains, dtype=np.float64)
        if vec.ndim != 1:
            raise DimensionMismatch("plaintext operand must be a vector")
        return self.dot_ct_pt_many(cts, vec[None, :])[0]

    def drop_level(self, ct: OracleCiphertext, level: int) -> OracleCiphertext:
        if level > ct.level or level < 0:
            raise LevelMismatch(f"cannot move a level-{ct.level} ciphertext to level {level}")
        return ct if level == ct.level else self._make(ct.values, level, ct.scale, ct.slots)

    def serialize(self, ct: OracleCiphertext, compress: bool = False) -> bytes:
        header = _HEADER.pack(ORACLE_MAGIC, 1, self.params.ring_degree, ct.level, ct.scale, ct.slots)
        return header + np.ascontiguousarray(ct.values, dtype="<f8").tobytes()

    def deserialize(self, blob: bytes) -> OracleCiphertext:
        if len(blob) != _HEADER.size + 8 * self.slot_count:
            raise FrameCorrupt(f"oracle ciphertext of {len(blob)} bytes")
        magic, _version, n, level, scale, slots = _HEADER.unpack_from(blob, 0)
        if magic != ORACLE_MAGIC or n != self.params.ring_degree:
            raise FrameCorrupt("bad oracle ciphertext header")
        values = np.frombuffer(blob[_HEADER.size:], dtype="<f8")
        return self._make(values, level, scale, slots)


class OracleDecryptor:
    """Reads oracle ciphertexts back; noise is identically zero."""

    def __init__(self, params: Optional[HeParams] = None):
        self.params = params

    def decrypt(self, ct: OracleCiphertext) -> np.ndarray:
        return np.array(ct.values)

    def decrypt_many(self, cts: Sequence[OracleCiphertext]) -> np.ndarray:
        return np.stack([c.values for c in cts]) if cts else np.zeros((0, 0))

    def measure_noise(self, ct: OracleCiphertext, expected: Any) -> NoiseReport:
        want = np.zeros_like(ct.values)
        exp = np.atleast_1d(np.asarray(expected, dtype=np.float64))
        want[:len(exp)] = exp
        return NoiseReport(measured_noise=float(np.max(np.abs(ct.values - want))) * ct.scale, bound=0.0)
