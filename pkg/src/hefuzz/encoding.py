"""
MinHash name encoding.

Names become shingle sets, shingle sets become MinHash signatures, and
signatures become the normalized / standardized real vectors that both
parties feed into clustering and encryption. Everything here is a pure
function of its inputs; two parties with equal EncodingParams produce
bit-identical output.
"""
import hashlib
import logging
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, FrameCorrupt, InvalidParams, NameTooShort, ZeroVector

logger = logging.getLogger(__name__)

# 2^61 - 1, the modulus of the universal hash family
MERSENNE_61 = (1 << 61) - 1

CENTROID_LENGTH = 200
MATCH_LENGTH = 50
STD_FLOOR = 1e-9

_P61 = np.uint64(MERSENNE_61)
_MASK32 = np.uint64(0xFFFFFFFF)
_MASK29 = np.uint64((1 << 29) - 1)
_U3 = np.uint64(3)
_U29 = np.uint64(29)
_U32 = np.uint64(32)
_U61 = np.uint64(61)

SIGNATURE_MAGIC = b"MHSG"
SIGNATURE_VERSION = 1
_SIGNATURE_HEADER = struct.Struct("<4sHHII")


@dataclass(frozen=True)
class EncodingParams:
    """Shared MinHash parameters. ``hash_offset`` selects the first hash index."""
    shingle_size: int = 3
    num_permutations: int = CENTROID_LENGTH
    max_hash: int = 1 << 20
    seed: int = 20240917
    hash_offset: int = 0

    def __post_init__(self) -> None:
        if self.shingle_size < 1:
            raise InvalidParams(f"shingle_size must be >= 1, got {self.shingle_size}")
        if not 1 <= self.num_permutations <= 0xFFFF:
            raise InvalidParams(f"num_permutations must be in [1, 65535], got {self.num_permutations}")
        if not 2 <= self.max_hash <= (1 << 32):
            raise InvalidParams(f"max_hash must be in [2, 2^32], got {self.max_hash}")
        if self.hash_offset < 0:
            raise InvalidParams(f"hash_offset must be >= 0, got {self.hash_offset}")

    def canonical_text(self) -> str:
        """Sorted ``key=value`` lines with decimal integers."""
        items = {
            "hash_offset": self.hash_offset,
            "max_hash": self.max_hash,
            "num_permutations": self.num_permutations,
            "seed": self.seed,
            "shingle_size": self.shingle_size,
        }
        return "".join(f"{key}={int(value)}\n" for key, value in sorted(items.items()))

    @property
    def fingerprint(self) -> int:
        digest = hashlib.sha256(self.canonical_text().encode("ascii")).digest()
        return int.from_bytes(digest[:4], "little")

    def match_params(self, length: int = MATCH_LENGTH) -> "EncodingParams":
        """Parameters of the final-matching signature, on hash indices disjoint from these."""
        return replace(self, num_permutations=length, hash_offset=self.hash_offset + self.num_permutations)

    def to_dict(self) -> Dict[str, int]:
        return {
            "shingle_size": self.shingle_size,
            "num_permutations": self.num_permutations,
            "max_hash": self.max_hash,
            "seed": self.seed,
            "hash_offset": self.hash_offset,
        }


@dataclass(frozen=True)
class MinHashSignature:
    """Per-permutation minima of one name."""
    values: np.ndarray
    params_fingerprint: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.int64).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ScalerParams:
    """Per-coordinate mean and (floored) population std of a dataset."""
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=np.float64).copy()
        stds = np.maximum(np.asarray(self.stds, dtype=np.float64), STD_FLOOR)
        if means.shape != stds.shape or means.ndim != 1:
            raise DimensionMismatch(f"means {means.shape} and stds {stds.shape} must be equal-length vectors")
        means.setflags(write=False)
        stds.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def dimension(self) -> int:
        return len(self.means)

    @classmethod
    def identity(cls, dimension: int) -> "ScalerParams":
        return cls(means=np.zeros(dimension), stds=np.ones(dimension))


@dataclass
class EncodedNames:
    """Batch encoding result: raw and normalized signatures at both lengths."""
    names: List[str]
    centroid_signatures: np.ndarray  # (n, 200) int64
    match_signatures: np.ndarray     # (n, 50) int64
    centroid_normalized: np.ndarray = field(init=False)
    match_normalized: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.centroid_normalized = normalize(self.centroid_signatures)
        self.match_normalized = normalize(self.match_signatures)

    def __len__(self) -> int:
        return len(self.names)


# ============== shingles and hashing ==============

def canonicalize_name(name: str) -> str:
    """Trim surrounding whitespace and lowercase; interior spaces are kept."""
    return name.strip().lower()


def generate_shingles(name: str, params: EncodingParams) -> Set[str]:
    """All contiguous substrings of ``shingle_size`` characters, spaces and case preserved."""
    size = params.shingle_size
    if len(name) < size:
        raise NameTooShort(f"name {name!r} is shorter than shingle size {size}")
    return {name[i:i + size] for i in range(len(name) - size + 1)}


def base_hash(shingle: str) -> int:
    """First 8 bytes (little-endian) of the SHA-256 digest of the UTF-8 shingle."""
    return int.from_bytes(hashlib.sha256(shingle.encode("utf-8")).digest()[:8], "little")


@lru_cache(maxsize=32)
def _hash_coefficients(seed: int, count: int) -> Tuple[np.ndarray, np.ndarray]:
    # Rows are drawn sequentially, so index i gets the same (a_i, b_i) for any count > i.
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    pairs = rng.integers(1, MERSENNE_61, size=(count, 2), dtype=np.uint64)
    a = pairs[:, 0].copy()
    b = pairs[:, 1].copy()
    a.setflags(write=False)
    b.setflags(write=False)
    return a, b


def _reduce_mersenne(v: np.ndarray) -> np.ndarray:
    # valid for v < 2^64
    v = (v & _P61) + (v >> _U61)
    return np.where(v >= _P61, v - _P61, v)


def _mulmod_mersenne(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(a * x) mod (2^61 - 1) for operands below 2^61, without overflow."""
    a_hi, a_lo = a >> _U32, a & _MASK32
    x_hi, x_lo = x >> _U32, x & _MASK32
    hi = a_hi * x_hi
    mid = a_hi * x_lo + a_lo * x_hi
    lo = a_lo * x_lo
    # 2^64 = 8 and 2^61 = 1 modulo p
    total = (hi << _U3) + (mid >> _U29) + ((mid & _MASK29) << _U32) + _reduce_mersenne(lo)
    return _reduce_mersenne(total)


def universal_hash(x: np.ndarray, a: np.ndarray, b: np.ndarray, max_hash: int) -> np.ndarray:
    """H(x) = ((a*x + b) mod p) mod max_hash, broadcasting x against (a, b)."""
    x = _reduce_mersenne(np.asarray(x, dtype=np.uint64))
    h = _reduce_mersenne(_mulmod_mersenne(a, x) + b)
    return (h % np.uint64(max_hash)).astype(np.int64)


def _minhash_values(name: str, params: EncodingParams, count: int) -> np.ndarray:
    shingles = sorted(generate_shingles(name, params))
    x = np.array([base_hash(s) for s in shingles], dtype=np.uint64)[:, None]
    a, b = _hash_coefficients(params.seed, params.hash_offset + count)
    offset = params.hash_offset
    hashed = universal_hash(x, a[None, offset:offset + count], b[None, offset:offset + count], params.max_hash)
    return hashed.min(axis=0)


def minhash_signature(name: str, params: EncodingParams) -> MinHashSignature:
    """MinHash signature of ``name`` exactly as given (no case folding here)."""
    values = _minhash_values(name, params, params.num_permutations)
    return MinHashSignature(values=values, params_fingerprint=params.fingerprint)


def encode_names(
    names: Iterable[str],
    params: EncodingParams,
    match_length: int = MATCH_LENGTH,
    canonicalize: bool = True,
) -> EncodedNames:
    """
    Encode a batch of names into centroid-length and match-length signatures.

    Both signatures come from one shingle set; the match signature uses the
    hash indices that follow the centroid signature's.
    """
    match = params.match_params(match_length)
    total = params.num_permutations + match_length
    prepared = [canonicalize_name(n) if canonicalize else n for n in names]

    rows = np.empty((len(prepared), total), dtype=np.int64)
    for i, name in enumerate(prepared):
        rows[i] = _minhash_values(name, params, total)

    logger.debug(f"Encoded {len(prepared)} names (P={params.num_permutations}+{match.num_permutations})")
    return EncodedNames(
        names=prepared,
        centroid_signatures=rows[:, :params.num_permutations],
        match_signatures=rows[:, params.num_permutations:],
    )


def jaccard(a: Set[str], b: Set[str]) -> float:
    """Exact Jaccard similarity of two shingle sets."""
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def minhash_agreement(a: Union[MinHashSignature, np.ndarray], b: Union[MinHashSignature, np.ndarray]) -> float:
    """Fraction of equal coordinates, the MinHash estimate of Jaccard similarity."""
    va = a.values if isinstance(a, MinHashSignature) else np.asarray(a)
    vb = b.values if isinstance(b, MinHashSignature) else np.asarray(b)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"signature lengths differ: {va.shape} vs {vb.shape}")
    return float(np.mean(va == vb))


# ============== real-valued views ==============

def normalize(sig: Union[MinHashSignature, np.ndarray, Sequence[float]]) -> np.ndarray:
    """
    L2-normalize one signature (1-D) or every row of a matrix (2-D).

    Raises ZeroVector for an all-zero input.
    """
    values = sig.values if isinstance(sig, MinHashSignature) else sig
    arr = np.asarray(values, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("cannot normalize an all-zero signature")
    return arr / norms


def fit_scaler(dataset: Union[np.ndarray, Sequence[np.ndarray]]) -> ScalerParams:
    """Population mean and std per coordinate, stds floored at 1e-9."""
    data = np.asarray(dataset, dtype=np.float64)
    if data.size == 0 or len(data) == 0:
        raise EmptyDataset("cannot fit a scaler on an empty dataset")
    if data.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D dataset, got shape {data.shape}")
    return ScalerParams(means=data.mean(axis=0), stds=data.std(axis=0))


def standardize(sig: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    """(sig - means) / stds; the result is not re-normalized."""
    arr = np.asarray(sig, dtype=np.float64)
    if arr.shape[-1] != scaler.dimension:
        raise DimensionMismatch(f"vector length {arr.shape[-1]} does not match scaler length {scaler.dimension}")
    return (arr - scaler.means) / scaler.stds


# ============== signature files ==============

def write_signatures(stream: BinaryIO, signatures: np.ndarray, params: EncodingParams) -> int:
    """Append one header+values record per row. Returns bytes written."""
    rows = np.atleast_2d(np.asarray(signatures))
    if rows.size == 0:
        return 0
    if rows.shape[1] != params.num_permutations:
        raise DimensionMismatch(f"signature length {rows.shape[1]} != P={params.num_permutations}")
    header = _SIGNATURE_HEADER.pack(
        SIGNATURE_MAGIC, SIGNATURE_VERSION, params.num_permutations, params.max_hash & 0xFFFFFFFF, params.fingerprint,
    )
    written = 0
    for row in rows.astype("<u4"):
        stream.write(header)
        stream.write(row.tobytes())
        written += len(header) + row.nbytes
    return written


def write_signature_file(path: Union[str, Path], encoded: EncodedNames, params: EncodingParams) -> int:
    """Write all centroid-length records followed by all match-length records."""
    match = params.match_params(encoded.match_signatures.shape[1])
    with open(path, "wb") as f:
        written = write_signatures(f, encoded.centroid_signatures, params)
        written += write_signatures(f, encoded.match_signatures, match)
    return written


def read_signature_file(path: Union[str, Path]) -> Dict[int, np.ndarray]:
    """Read a signature file, grouping records by signature length P."""
    data = Path(path).read_bytes()
    grouped: Dict[int, List[np.ndarray]] = {}
    offset = 0
    while offset < len(data):
        if offset + _SIGNATURE_HEADER.size > len(data):
            raise FrameCorrupt(f"truncated signature header at byte {offset}")
        magic, version, length, _max_hash, _fingerprint = _SIGNATURE_HEADER.unpack_from(data, offset)
        if magic != SIGNATURE_MAGIC or version != SIGNATURE_VERSION:
            raise FrameCorrupt(f"bad signature record header at byte {offset}")
        offset += _SIGNATURE_HEADER.size
        end = offset + 4 * length
        if end > len(data):
            raise FrameCorrupt(f"truncated signature body at byte {offset}")
        grouped.setdefault(length, []).append(np.frombuffer(data[offset:end], dtype="<u4").astype(np.int64))
        offset = end
    return {length: np.vstack(rows) for length, rows in grouped.items()}


def is_signature_file(path: Union[str, Path]) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == SIGNATURE_MAGIC


def load_names(path: Union[str, Path]) -> List[Tuple[int, str]]:
    """Read newline-delimited UTF-8 names as (line number, name), skipping blank lines."""
    entries: List[Tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                entries.append((lineno, line.rstrip("\n")))
    return entries


def split_valid_names(entries: Iterable[Tuple[int, str]], params: EncodingParams) -> Tuple[List[Tuple[int, str]], List[Tuple[int, str]]]:
    """Partition (lineno, name) entries into encodable and too-short ones."""
    good: List[Tuple[int, str]] = []
    bad: List[Tuple[int, str]] = []
    for lineno, name in entries:
        (good if len(canonicalize_name(name)) >= params.shingle_size else bad).append((lineno, name))
    return good, bad

