"""
Binary formats for ciphertexts and keys.

Ciphertext ("CKCT"): little-endian header
    magic[4] version u16 flags u8 N u32 level u8 scale f64 num_moduli u8 slots u16
followed by the c0 then c1 residue arrays as u64, optionally zstd-compressed
(flags bit 0). Byte counts in transcripts come from exactly this encoding.
"""
import logging
import os
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import zstandard

from .ckks import Ciphertext, CkksContext, HeParams, PublicKey, RelinKey, SecretKey, secret_from_coeffs
from .errors import FrameCorrupt

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FLAG_ZSTD = 0x01

CIPHERTEXT_MAGIC = b"CKCT"
PUBLIC_KEY_MAGIC = b"CKPK"
RELIN_KEY_MAGIC = b"CKRK"
SECRET_KEY_MAGIC = b"CKSK"

_CT_HEADER = struct.Struct("<4sHBIBdBH")
_PK_HEADER = struct.Struct("<4sHBIB")
_RK_HEADER = struct.Struct("<4sHBIBB")
_SK_HEADER = struct.Struct("<4sHBIH")

_ZSTD_LEVEL = 3


def _pack_body(arrays: Tuple[np.ndarray, ...], compress: bool) -> bytes:
    body = b"".join(np.ascontiguousarray(a, dtype="<u8").tobytes() for a in arrays)
    if compress:
        body = zstandard.ZstdCompressor(level=_ZSTD_LEVEL).compress(body)
    return body


def _unpack_body(body: bytes, flags: int, expected: int) -> np.ndarray:
    if flags & FLAG_ZSTD:
        try:
            body = zstandard.ZstdDecompressor().decompress(body)
        except zstandard.ZstdError as e:
            raise FrameCorrupt(f"bad zstd body: {e}") from e
    if len(body) != expected * 8:
        raise FrameCorrupt(f"body holds {len(body)} bytes, expected {expected * 8}")
    return np.frombuffer(body, dtype="<u8").astype(np.uint64)


def _check_magic(blob: bytes, header: struct.Struct, magic: bytes) -> tuple:
    if len(blob) < header.size:
        raise FrameCorrupt(f"blob too short for {magic.decode()} header")
    fields = header.unpack_from(blob, 0)
    if fields[0] != magic:
        raise FrameCorrupt(f"bad magic {fields[0]!r}, expected {magic!r}")
    if fields[1] != FORMAT_VERSION:
        raise FrameCorrupt(f"unsupported {magic.decode()} version {fields[1]}")
    return fields


# ============== ciphertexts ==============

def serialize_ciphertext(ct: Ciphertext, params: HeParams, compress: bool = False) -> bytes:
    header = _CT_HEADER.pack(
        CIPHERTEXT_MAGIC, FORMAT_VERSION, FLAG_ZSTD if compress else 0, params.ring_degree,
        ct.level, ct.scale, ct.num_moduli, ct.slots,
    )
    return header + _pack_body((ct.c0, ct.c1), compress)


def deserialize_ciphertext(blob: bytes, context: CkksContext) -> Ciphertext:
    _, _, flags, n, level, scale, num_moduli, slots = _check_magic(blob, _CT_HEADER, CIPHERTEXT_MAGIC)
    if n != context.params.ring_degree:
        raise FrameCorrupt(f"ciphertext ring degree {n} != {context.params.ring_degree}")
    if level > context.top_level or num_moduli != len(context.basis.level_indices(level)):
        raise FrameCorrupt(f"level {level} inconsistent with {num_moduli} moduli")
    values = _unpack_body(blob[_CT_HEADER.size:], flags, 2 * num_moduli * n).reshape(2, num_moduli, n)
    return Ciphertext(c0=values[0].copy(), c1=values[1].copy(), level=level, scale=scale, slots=slots)


def ciphertext_size(params: HeParams, level: int) -> int:
    """Uncompressed serialized size of a ciphertext at ``level``."""
    context = CkksContext(params)
    return _CT_HEADER.size + 2 * len(context.basis.level_indices(level)) * params.ring_degree * 8


# ============== keys ==============

def serialize_public_key(key: PublicKey, params: HeParams, compress: bool = False) -> bytes:
    header = _PK_HEADER.pack(PUBLIC_KEY_MAGIC, FORMAT_VERSION, FLAG_ZSTD if compress else 0,
                             params.ring_degree, key.b.shape[0])
    return header + _pack_body((key.b, key.a), compress)


def deserialize_public_key(blob: bytes, params: HeParams) -> PublicKey:
    _, _, flags, n, moduli = _check_magic(blob, _PK_HEADER, PUBLIC_KEY_MAGIC)
    if n != params.ring_degree:
        raise FrameCorrupt(f"public key ring degree {n} != {params.ring_degree}")
    values = _unpack_body(blob[_PK_HEADER.size:], flags, 2 * moduli * n).reshape(2, moduli, n)
    return PublicKey(b=values[0].copy(), a=values[1].copy())


def serialize_relin_key(key: RelinKey, params: HeParams, compress: bool = False) -> bytes:
    digits, moduli, _ = key.b.shape
    header = _RK_HEADER.pack(RELIN_KEY_MAGIC, FORMAT_VERSION, FLAG_ZSTD if compress else 0,
                             params.ring_degree, digits, moduli)
    return header + _pack_body((key.b, key.a), compress)


def deserialize_relin_key(blob: bytes, params: HeParams) -> RelinKey:
    _, _, flags, n, digits, moduli = _check_magic(blob, _RK_HEADER, RELIN_KEY_MAGIC)
    if n != params.ring_degree:
        raise FrameCorrupt(f"relinearization key ring degree {n} != {params.ring_degree}")
    values = _unpack_body(blob[_RK_HEADER.size:], flags, 2 * digits * moduli * n).reshape(2, digits, moduli, n)
    return RelinKey(b=values[0].copy(), a=values[1].copy())


def serialize_secret_key(key: SecretKey, params: HeParams) -> bytes:
    header = _SK_HEADER.pack(SECRET_KEY_MAGIC, FORMAT_VERSION, 0, params.ring_degree, params.secret_hamming_weight)
    return header + np.asarray(key.coeffs, dtype=np.int8).tobytes()


def deserialize_secret_key(blob: bytes, params: HeParams) -> SecretKey:
    _, _, _, n, _weight = _check_magic(blob, _SK_HEADER, SECRET_KEY_MAGIC)
    body = blob[_SK_HEADER.size:]
    if n != params.ring_degree or len(body) != n:
        raise FrameCorrupt("secret key size does not match the ring degree")
    return secret_from_coeffs(params, np.frombuffer(body, dtype=np.int8))


def write_private_file(path: Union[str, Path], data: bytes) -> None:
    """Write ``data`` readable by the owner only (mode 0600)."""
    fd = os.open(str(path), os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.chmod(path, 0o600)
