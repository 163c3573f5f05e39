"""
Leveled CKKS engine over an RNS modulus chain.

Provides exactly what the matching protocol needs: encode/decode,
public-key encryption, additions, plaintext and ciphertext products with
relinearization and an explicit rescale after every product, and batched
dot products. Ciphertexts are kept in NTT form; one ciphertext carries one
signature coordinate with the query batch laid out across slots, so no
rotations are needed.

The responder side only ever holds a ``CkksEvaluator`` (public material);
decryption lives in ``CkksDecryptor`` which requires the secret key.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from . import noise
from .errors import (
    DimensionMismatch,
    InvalidParams,
    LevelExhausted,
    LevelMismatch,
    ScaleMismatch,
    ScaleOverflow,
    TooManySlots,
)
from .ring import RnsBasis, cached_basis, modular_matmul

logger = logging.getLogger(__name__)

Number = Union[int, float]
_COEFF_LIMIT = float(1 << 62)
PROTOCOL_MODULUS_BITS: Tuple[int, ...] = (60, 40, 40, 40, 60)


@dataclass(frozen=True)
class HeParams:
    """
    Public CKKS parameters.

    ``modulus_bits`` follows the usual convention: every entry but the last
    is a data modulus (q_0 first), the last is the special key-switching
    modulus P. The default chain therefore supports two rescales; the
    protocol uses ``PROTOCOL_MODULUS_BITS`` for three.
    """
    ring_degree: int = 8192
    scale: float = 2.0 ** 40
    modulus_bits: Tuple[int, ...] = (60, 40, 40, 60)
    error_stddev: float = 3.2
    secret_hamming_weight: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "modulus_bits", tuple(int(b) for b in self.modulus_bits))
        n = self.ring_degree
        if n < 8 or n & (n - 1):
            raise InvalidParams(f"ring_degree must be a power of two >= 8, got {n}")
        if len(self.modulus_bits) < 3:
            raise InvalidParams(f"modulus chain needs >= 3 entries, got {list(self.modulus_bits)}")
        if not self.scale > 1.0:
            raise InvalidParams(f"scale must be > 1, got {self.scale}")
        if self.error_stddev <= 0:
            raise InvalidParams(f"error_stddev must be > 0, got {self.error_stddev}")
        if not 1 <= self.secret_hamming_weight <= n:
            raise InvalidParams(f"secret_hamming_weight must be in [1, N], got {self.secret_hamming_weight}")

    @property
    def special_modulus_bits(self) -> int:
        return self.modulus_bits[-1]

    @property
    def slot_count(self) -> int:
        return self.ring_degree // 2

    @property
    def top_level(self) -> int:
        return len(self.modulus_bits) - 2

    @classmethod
    def for_protocol(cls, **overrides: Any) -> "HeParams":
        overrides.setdefault("modulus_bits", PROTOCOL_MODULUS_BITS)
        return cls(**overrides)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ring_degree": self.ring_degree,
            "scale": self.scale,
            "modulus_bits": list(self.modulus_bits),
            "error_stddev": self.error_stddev,
            "secret_hamming_weight": self.secret_hamming_weight,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HeParams":
        return cls(
            ring_degree=int(data["ring_degree"]),
            scale=float(data["scale"]),
            modulus_bits=tuple(data["modulus_bits"]),
            error_stddev=float(data["error_stddev"]),
            secret_hamming_weight=int(data["secret_hamming_weight"]),
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Plaintext:
    """Encoded polynomial in NTT form over the primes of ``level``."""
    poly: np.ndarray = field(repr=False)
    level: int
    scale: float
    slots: int


@dataclass(frozen=True)
class Ciphertext:
    """
    (c0, c1) in NTT form over q_0..q_level.

    ``slots`` is the number of leading slots carrying values (the batch
    size). ``noise_bound`` and ``value_bound`` track canonical-norm bounds of
    the error and of the message; they are local bookkeeping and are not
    serialized (NaN after deserialization).
    """
    c0: np.ndarray = field(repr=False)
    c1: np.ndarray = field(repr=False)
    level: int
    scale: float
    slots: int
    noise_bound: float = float("nan")
    value_bound: float = float("nan")

    def __post_init__(self) -> None:
        _frozen(self.c0)
        _frozen(self.c1)

    @property
    def num_moduli(self) -> int:
        return self.c0.shape[0]


@dataclass(frozen=True)
class SecretKey:
    coeffs: np.ndarray = field(repr=False)   # ternary int8, length N
    ntt: np.ndarray = field(repr=False)      # all primes, NTT form


@dataclass(frozen=True)
class PublicKey:
    b: np.ndarray = field(repr=False)        # top-level data primes
    a: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class RelinKey:
    """One key pair per data prime (gadget digit), each over every prime of the chain."""
    b: np.ndarray = field(repr=False)        # (digits, all primes, N)
    a: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class KeySet:
    params: HeParams
    secret: SecretKey = field(repr=False)
    public: PublicKey = field(repr=False)
    relin: RelinKey = field(repr=False)


# ============== encoding ==============

class CkksEncoder:
    """
    Canonical-embedding encoder using numpy FFTs.

    Slot j sits at the root zeta^(5^j mod 2N) and its conjugate at
    zeta^(-5^j), so real inputs give real integer polynomials.
    """

    def __init__(self, ring_degree: int):
        n = ring_degree
        self.ring_degree = n
        self.slot_count = n // 2
        rot = np.empty(self.slot_count, dtype=np.int64)
        g = 1
        for j in range(self.slot_count):
            rot[j] = g
            g = g * 5 % (2 * n)
        self._slot_index = (rot - 1) // 2
        self._conj_index = (2 * n - rot - 1) // 2
        self._twist = np.exp(1j * np.pi * np.arange(n) / n)
        self._untwist = np.conj(self._twist)

    def _check_width(self, values: np.ndarray) -> None:
        if values.shape[-1] > self.slot_count:
            raise TooManySlots(f"{values.shape[-1]} values exceed {self.slot_count} slots")

    def encode_coefficients(self, values: Any, scale: float) -> np.ndarray:
        """Values (..., <= N/2) -> rounded int64 coefficients (..., N)."""
        vals = np.asarray(values, dtype=np.complex128)
        vals = vals.reshape(vals.shape or (1,))
        self._check_width(vals)
        lead = vals.shape[:-1]
        padded = np.zeros(lead + (self.slot_count,), dtype=np.complex128)
        padded[..., :vals.shape[-1]] = vals
        evals = np.zeros(lead + (self.ring_degree,), dtype=np.complex128)
        evals[..., self._slot_index] = padded
        evals[..., self._conj_index] = np.conj(padded)
        coeffs = (np.fft.fft(evals, axis=-1) / self.ring_degree * self._untwist).real * scale
        if coeffs.size and np.max(np.abs(coeffs)) >= _COEFF_LIMIT:
            raise ScaleOverflow(f"encoded coefficients exceed 2^62 at scale {scale:.3g}")
        return np.rint(coeffs).astype(np.int64)

    def decode_coefficients(self, coeffs: np.ndarray, scale: float) -> np.ndarray:
        """Integer coefficients (..., N) -> complex slot values (..., N/2)."""
        c = np.asarray(coeffs, dtype=np.float64)
        evals = np.fft.ifft(c * self._twist, axis=-1) * self.ring_degree
        return evals[..., self._slot_index] / scale


class CkksContext:
    """Parameters, RNS basis and encoder shared by every engine object."""

    def __init__(self, params: HeParams):
        self.params = params
        self.basis: RnsBasis = cached_basis(params.ring_degree, params.modulus_bits)
        self.encoder = CkksEncoder(params.ring_degree)

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    @property
    def top_level(self) -> int:
        return self.params.top_level

    def level_modulus(self, level: int) -> int:
        return self.basis.group_modulus(level)

    def chain_modulus(self, level: int) -> int:
        return math.prod(self.basis.group_modulus(i) for i in range(level + 1))

    def encode(self, values: Any, scale: Optional[float] = None, level: Optional[int] = None) -> Plaintext:
        scale = self.params.scale if scale is None else scale
        level = self.top_level if level is None else level
        vals = np.atleast_1d(np.asarray(values, dtype=np.float64))
        coeffs = self.encoder.encode_coefficients(vals, scale)
        idx = self.basis.level_indices(level)
        poly = self.basis.ntt(self.basis.to_rns(coeffs, idx), idx)
        return Plaintext(poly=_frozen(poly), level=level, scale=scale, slots=len(vals))

    def decode(self, pt: Plaintext) -> np.ndarray:
        base = self.basis.group_indices(0)
        coeffs = self.basis.crt_centered(self.basis.intt(pt.poly[:len(base)], base), base)
        return self.encoder.decode_coefficients(coeffs, pt.scale).real

    # ---------- noise constants ----------

    @property
    def clean_bound(self) -> float:
        p = self.params
        return noise.clean_bound(p.ring_degree, p.error_stddev, p.secret_hamming_weight)

    @property
    def scale_bound(self) -> float:
        return noise.scale_bound(self.params.ring_degree, self.params.secret_hamming_weight)

    def relin_bound(self, level: int) -> float:
        p = self.params
        idx = self.basis.level_indices(level)
        max_prime = max(self.basis.prime_ints[i] for i in idx)
        return noise.relin_bound(p.ring_degree, p.error_stddev, p.secret_hamming_weight,
                                 len(idx), max_prime, self.basis.special_modulus)

    def mult_bound(self, level: int) -> float:
        """B_mult(level) as used by the ct x ct dot-product closed form."""
        return self.relin_bound(level) / self.level_modulus(level) + self.scale_bound


# ============== sampling ==============

def _sample_gaussian(rng: np.random.Generator, sigma: float, shape: Tuple[int, ...]) -> np.ndarray:
    return np.rint(rng.normal(0.0, sigma, size=shape)).astype(np.int64)


def _sample_zero_one(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """Ternary with P(+1) = P(-1) = 1/4."""
    u = rng.random(shape)
    out = np.zeros(shape, dtype=np.int64)
    out[u < 0.25] = 1
    out[(u >= 0.25) & (u < 0.5)] = -1
    return out


def _sample_sparse_ternary(rng: np.random.Generator, n: int, weight: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.int64)
    positions = rng.choice(n, size=weight, replace=False)
    out[positions] = rng.choice(np.array([-1, 1]), size=weight)
    return out


def _sample_uniform(rng: np.random.Generator, basis: RnsBasis, idx: np.ndarray, lead: Tuple[int, ...] = ()) -> np.ndarray:
    high = basis.primes[idx][:, None]
    return rng.integers(0, high, size=lead + (len(idx), basis.ring_degree), dtype=np.uint64)


def keygen(params: HeParams, seed: Optional[int] = None) -> KeySet:
    """Generate secret, public and relinearization keys."""
    context = CkksContext(params)
    basis = context.basis
    rng = np.random.default_rng(seed)
    n = params.ring_degree

    all_idx = np.arange(len(basis.primes))
    s = _sample_sparse_ternary(rng, n, params.secret_hamming_weight)
    s_ntt = basis.ntt(basis.to_rns(s, all_idx), all_idx)

    # public key over the data primes of the top level
    data_idx = basis.level_indices(params.top_level)
    q = basis.moduli(data_idx)
    a = _sample_uniform(rng, basis, data_idx)
    e = basis.ntt(basis.to_rns(_sample_gaussian(rng, params.error_stddev, (n,)), data_idx), data_idx)
    b = (q - a * s_ntt[data_idx] % q + e) % q

    # relinearization key: one digit per data prime, every key over the whole chain
    digits = len(data_idx)
    q_all = basis.moduli(all_idx)
    ra = _sample_uniform(rng, basis, all_idx, lead=(digits,))
    re = basis.ntt(basis.to_rns(_sample_gaussian(rng, params.error_stddev, (digits, n)), all_idx), all_idx)
    rb = (q_all - ra * s_ntt % q_all + re) % q_all
    s2 = s_ntt * s_ntt % q_all
    special = basis.special_modulus
    for j in range(digits):
        p = basis.prime_ints[j]
        gadget = np.uint64(special % p)
        rb[j, j] = (rb[j, j] + gadget * s2[j] % np.uint64(p)) % np.uint64(p)

    logger.info(f"Generated keys: N={n}, chain={list(params.modulus_bits)}, primes={len(basis.primes)}")
    return KeySet(
        params=params,
        secret=SecretKey(coeffs=_frozen(s.astype(np.int8)), ntt=_frozen(s_ntt)),
        public=PublicKey(b=_frozen(b), a=_frozen(a)),
        relin=RelinKey(b=_frozen(rb), a=_frozen(ra)),
    )


def secret_from_coeffs(params: HeParams, coeffs: np.ndarray) -> SecretKey:
    basis = cached_basis(params.ring_degree, params.modulus_bits)
    all_idx = np.arange(len(basis.primes))
    s = np.asarray(coeffs, dtype=np.int64)
    return SecretKey(coeffs=_frozen(s.astype(np.int8)), ntt=_frozen(basis.ntt(basis.to_rns(s, all_idx), all_idx)))


# ============== shared operand rules ==============

def require_same_level(a: Any, b: Any) -> None:
    if a.level != b.level:
        raise LevelMismatch(f"operands at levels {a.level} and {b.level}; use drop_level to align")


def require_same_scale(a: Any, b: Any) -> None:
    if a.scale != b.scale:
        raise ScaleMismatch(f"operand scales differ: {a.scale!r} vs {b.scale!r}")


def require_uniform(cts: Sequence[Any]) -> Tuple[int, float]:
    if not cts:
        raise DimensionMismatch("empty ciphertext vector")
    first = cts[0]
    for ct in cts[1:]:
        require_same_level(first, ct)
        require_same_scale(first, ct)
    return first.level, first.scale


def require_multipliable(level: int) -> None:
    if level < 1:
        raise LevelExhausted("no modulus left to rescale by (level 0)")


class HeEvaluator(Protocol):
    """Operations available to the party without the secret key."""

    @property
    def slot_count(self) -> int: ...

    @property
    def top_level(self) -> int: ...

    def encrypt(self, values: Any) -> Any: ...

    def encrypt_many(self, rows: Any) -> List[Any]: ...

    def add(self, a: Any, b: Any) -> Any: ...

    def add_plain(self, ct: Any, value: Any) -> Any: ...

    def mul(self, a: Any, b: Any) -> Any: ...

    def mul_plain(self, ct: Any, value: Any) -> Any: ...

    def drop_level(self, ct: Any, level: int) -> Any: ...

    def dot_ct_pt(self, cts: Sequence[Any], plains: Any) -> Any: ...

    def dot_ct_pt_many(self, cts: Sequence[Any], matrix: Any) -> List[Any]: ...

    def dot_ct_ct(self, cts_a: Sequence[Any], cts_b: Sequence[Any]) -> Any: ...

    def serialize(self, ct: Any, compress: bool = False) -> bytes: ...

    def deserialize(self, blob: bytes) -> Any: ...


class HeDecryptor(Protocol):

    def decrypt(self, ct: Any) -> np.ndarray: ...

    def decrypt_many(self, cts: Sequence[Any]) -> np.ndarray: ...

    def measure_noise(self, ct: Any, expected: Any) -> noise.NoiseReport: ...


# ============== evaluator ==============

class CkksEvaluator:
    """Homomorphic operations with public material only."""

    def __init__(self, context: CkksContext, public_key: PublicKey, relin_key: RelinKey, seed: Optional[int] = None):
        self.context = context
        self.basis = context.basis
        self.params = context.params
        self.public_key = public_key
        self.relin_key = relin_key
        self._rng = np.random.default_rng(seed)
        self._rng_lock = threading.Lock()

    @classmethod
    def from_keys(cls, keys: KeySet, seed: Optional[int] = None) -> "CkksEvaluator":
        return cls(CkksContext(keys.params), keys.public, keys.relin, seed=seed)

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    @property
    def top_level(self) -> int:
        return self.params.top_level

    def _moduli(self, level: int) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.basis.level_indices(level)
        return idx, self.basis.moduli(idx)

    # ---------- encryption ----------

    def encrypt(self, values: Any) -> Ciphertext:
        return self.encrypt_many(np.atleast_2d(np.asarray(values, dtype=np.float64)))[0]

    def encrypt_many(self, rows: Any, chunk: int = 16) -> List[Ciphertext]:
        """Encrypt each row of a (count, width) matrix at the top level."""
        matrix = np.asarray(rows, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[None, :]
        if matrix.shape[1] > self.slot_count:
            raise TooManySlots(f"{matrix.shape[1]} values exceed {self.slot_count} slots")
        level = self.top_level
        idx, q = self._moduli(level)
        n = self.params.ring_degree
        scale = self.params.scale
        clean = self.context.clean_bound
        out: List[Ciphertext] = []
        for start in range(0, len(matrix), chunk):
            block = matrix[start:start + chunk]
            coeffs = self.context.encoder.encode_coefficients(block, scale)
            count = len(block)
            with self._rng_lock:
                v = _sample_zero_one(self._rng, (count, n))
                e0 = _sample_gaussian(self._rng, self.params.error_stddev, (count, n))
                e1 = _sample_gaussian(self._rng, self.params.error_stddev, (count, n))
            polys = self.basis.ntt(self.basis.to_rns(np.stack([v, coeffs + e0, e1], axis=1), idx), idx)
            c0 = (polys[:, 0] * self.public_key.b % q + polys[:, 1]) % q
            c1 = (polys[:, 0] * self.public_key.a % q + polys[:, 2]) % q
            for i in range(count):
                value_bound = float(np.max(np.abs(block[i]), initial=0.0)) * scale + n / 2
                out.append(Ciphertext(c0=c0[i], c1=c1[i], level=level, scale=scale, slots=block.shape[1],
                                      noise_bound=clean, value_bound=value_bound))
        return out

    # ---------- additions ----------

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        require_same_level(a, b)
        require_same_scale(a, b)
        _, q = self._moduli(a.level)
        return Ciphertext(
            c0=(a.c0 + b.c0) % q, c1=(a.c1 + b.c1) % q, level=a.level, scale=a.scale,
            slots=max(a.slots, b.slots), noise_bound=a.noise_bound + b.noise_bound,
            value_bound=a.value_bound + b.value_bound,
        )

    def _constant_residues(self, constant: int, idx: np.ndarray) -> np.ndarray:
        return np.array([constant % self.basis.prime_ints[i] for i in idx], dtype=np.uint64)[:, None]

    def add_plain(self, ct: Ciphertext, value: Any) -> Ciphertext:
        """Add a constant or a slot vector encoded at the ciphertext's scale."""
        idx, q = self._moduli(ct.level)
        if np.ndim(value) == 0:
            scaled = float(value) * ct.scale
            if abs(scaled) >= _COEFF_LIMIT:
                raise ScaleOverflow(f"constant {value} overflows at scale {ct.scale:.3g}")
            poly = self._constant_residues(int(round(scaled)), idx)
            rounding, magnitude, slots = 0.5, abs(float(value)), ct.slots
        else:
            pt = self.context.encode(value, scale=ct.scale, level=ct.level)
            poly = pt.poly
            vals = np.asarray(value, dtype=np.float64)
            rounding, magnitude, slots = self.params.ring_degree / 2, float(np.max(np.abs(vals), initial=0.0)), max(ct.slots, pt.slots)
        return Ciphertext(
            c0=(ct.c0 + poly) % q, c1=ct.c1, level=ct.level, scale=ct.scale, slots=slots,
            noise_bound=ct.noise_bound + rounding, value_bound=ct.value_bound + magnitude * ct.scale,
        )

    # ---------- products ----------

    def _rescale(self, stacked: np.ndarray, level: int) -> np.ndarray:
        """Divide (..., l, N) residues by q_level with rounding."""
        require_multipliable(level)
        keep = self.basis.level_indices(level - 1)
        drop = self.basis.group_indices(level)
        return self.basis.divide_round(stacked[..., :len(keep), :], stacked[..., len(keep):, :], keep, drop)

    def mul_plain(self, ct: Ciphertext, value: Any) -> Ciphertext:
        """
        Multiply by a constant or a slot vector, then rescale.

        The multiplicand is encoded at q_level, so the result keeps the
        ciphertext's scale exactly.
        """
        require_multipliable(ct.level)
        idx, q = self._moduli(ct.level)
        q_level = self.context.level_modulus(ct.level)
        if np.ndim(value) == 0:
            scaled = float(value) * q_level
            if abs(scaled) >= _COEFF_LIMIT:
                raise ScaleOverflow(f"constant {value} overflows at scale {q_level:.3g}")
            poly = self._constant_residues(int(round(scaled)), idx)
            rounding, magnitude, slots = 0.5, abs(float(value)), ct.slots
        else:
            pt = self.context.encode(value, scale=float(q_level), level=ct.level)
            poly = pt.poly
            rounding = self.params.ring_degree / 2
            magnitude = float(np.max(np.abs(np.asarray(value, dtype=np.float64)), initial=0.0))
            slots = max(ct.slots, pt.slots)
        prod = np.stack([ct.c0 * poly % q, ct.c1 * poly % q])
        out = self._rescale(prod, ct.level)
        encoded = magnitude * q_level + rounding
        pre_noise = encoded * ct.noise_bound + rounding * ct.value_bound
        return Ciphertext(
            c0=out[0], c1=out[1], level=ct.level - 1, scale=ct.scale, slots=slots,
            noise_bound=pre_noise / q_level + self.context.scale_bound,
            value_bound=encoded * ct.value_bound / q_level,
        )

    def _relinearize(self, d0: np.ndarray, d1: np.ndarray, d2: np.ndarray, level: int) -> Tuple[np.ndarray, np.ndarray]:
        basis = self.basis
        idx, q = self._moduli(level)
        special = basis.special_indices()
        targets = np.concatenate([idx, special])
        q_t = basis.moduli(targets)

        digits = basis.centered(basis.intt(d2, idx), idx)
        lifted = basis.ntt(basis.to_rns(digits, targets), targets)
        key_b = self.relin_key.b[idx][:, targets]
        key_a = self.relin_key.a[idx][:, targets]
        acc_b = (lifted * key_b % q_t).sum(axis=0) % q_t
        acc_a = (lifted * key_a % q_t).sum(axis=0) % q_t

        count = len(idx)
        switched = basis.divide_round(
            np.stack([acc_b[:count], acc_a[:count]]), np.stack([acc_b[count:], acc_a[count:]]), idx, special,
        )
        return (d0 + switched[0]) % q, (d1 + switched[1]) % q

    def _product_scale(self, scale_a: float, scale_b: float, level: int) -> float:
        if scale_a * scale_b >= self.context.chain_modulus(level) / 2:
            raise ScaleOverflow(f"product scale {scale_a * scale_b:.3g} exceeds the level-{level} modulus")
        return scale_a * scale_b / self.context.level_modulus(level)

    def mul(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        """Ciphertext product with relinearization and rescale."""
        require_same_level(a, b)
        require_multipliable(a.level)
        return self.dot_ct_ct([a], [b])

    def dot_ct_ct(self, cts_a: Sequence[Ciphertext], cts_b: Sequence[Ciphertext]) -> Ciphertext:
        """
        Slot-wise sum of products, relinearized and rescaled once.

        The degree-2 tensor is accumulated over all terms before the single
        key switch.
        """
        if len(cts_a) != len(cts_b):
            raise DimensionMismatch(f"dot product of {len(cts_a)} and {len(cts_b)} ciphertexts")
        level_a, scale_a = require_uniform(cts_a)
        level_b, scale_b = require_uniform(cts_b)
        require_same_level(cts_a[0], cts_b[0])
        require_multipliable(level_a)
        scale = self._product_scale(scale_a, scale_b, level_a)
        _, q = self._moduli(level_a)

        a0 = np.stack([c.c0 for c in cts_a])
        a1 = np.stack([c.c1 for c in cts_a])
        b0 = np.stack([c.c0 for c in cts_b])
        b1 = np.stack([c.c1 for c in cts_b])
        d0 = (a0 * b0 % q).sum(axis=0) % q
        d1 = ((a0 * b1 % q) + (a1 * b0 % q)).sum(axis=0) % q
        d2 = (a1 * b1 % q).sum(axis=0) % q
        c0, c1 = self._relinearize(d0, d1, d2, level_a)
        out = self._rescale(np.stack([c0, c1]), level_a)

        q_level = self.context.level_modulus(level_a)
        pre_noise = sum(
            noise.product_bound(x.value_bound, x.noise_bound, y.value_bound, y.noise_bound)
            for x, y in zip(cts_a, cts_b)
        ) + self.context.relin_bound(level_a)
        value = sum(x.value_bound * y.value_bound for x, y in zip(cts_a, cts_b))
        return Ciphertext(
            c0=out[0], c1=out[1], level=level_a - 1, scale=scale,
            slots=max(max(c.slots for c in cts_a), max(c.slots for c in cts_b)),
            noise_bound=pre_noise / q_level + self.context.scale_bound,
            value_bound=value / q_level,
        )

    def dot_ct_pt_many(self, cts: Sequence[Ciphertext], matrix: Any) -> List[Ciphertext]:
        """
        One ciphertext per row of ``matrix``: sum_i row[i] * cts[i], rescaled once.

        Computed as a modular matrix product over all primes at once.
        """
        mat = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        if mat.shape[1] != len(cts):
            raise DimensionMismatch(f"{mat.shape[1]} plaintext values for {len(cts)} ciphertexts")
        level, scale = require_uniform(cts)
        require_multipliable(level)
        idx, _ = self._moduli(level)
        q_level = self.context.level_modulus(level)
        n = self.params.ring_degree

        scaled = np.rint(mat * float(q_level))
        if scaled.size and np.max(np.abs(scaled)) >= _COEFF_LIMIT:
            raise ScaleOverflow("plaintext values overflow at the level modulus")
        primes = self.basis.primes[idx].astype(np.int64)[:, None, None]
        lhs = np.mod(scaled.astype(np.int64)[None, :, :], primes).astype(np.uint64)
        rhs = np.stack([np.concatenate([c.c0, c.c1], axis=-1) for c in cts], axis=1)
        prod = modular_matmul(lhs, rhs, self.basis.primes[idx])
        rows = prod.reshape(len(idx), len(mat), 2, n).transpose(1, 2, 0, 3)
        out = self._rescale(rows, level)

        noises = np.array([c.noise_bound for c in cts])
        values = np.array([c.value_bound for c in cts])
        encoded = np.abs(mat) * q_level + 0.5
        pre_noise = encoded @ noises + 0.5 * values.sum()
        post_values = encoded @ values / q_level
        slots = max(c.slots for c in cts)
        return [
            Ciphertext(c0=out[r, 0], c1=out[r, 1], level=level - 1, scale=scale, slots=slots,
                       noise_bound=float(pre_noise[r]) / q_level + self.context.scale_bound,
                       value_bound=float(post_values[r]))
            for r in range(len(mat))
        ]

    def dot_ct_pt(self, cts: Sequence[Ciphertext], plains: Any) -> Ciphertext:
        vec = np.asarray(plains, dtype=np.float64)
        if vec.ndim != 1:
            raise DimensionMismatch("plaintext operand must be a vector")
        return self.dot_ct_pt_many(cts, vec[None, :])[0]

    def drop_level(self, ct: Ciphertext, level: int) -> Ciphertext:
        """Discard moduli above ``level`` without rescaling."""
        if level > ct.level or level < 0:
            raise LevelMismatch(f"cannot move a level-{ct.level} ciphertext to level {level}")
        if level == ct.level:
            return ct
        count = len(self.basis.level_indices(level))
        return Ciphertext(c0=ct.c0[:count].copy(), c1=ct.c1[:count].copy(), level=level, scale=ct.scale,
                          slots=ct.slots, noise_bound=ct.noise_bound, value_bound=ct.value_bound)

    # ---------- wire ----------

    def serialize(self, ct: Ciphertext, compress: bool = False) -> bytes:
        from .serialize import serialize_ciphertext
        return serialize_ciphertext(ct, self.params, compress=compress)

    def deserialize(self, blob: bytes) -> Ciphertext:
        from .serialize import deserialize_ciphertext
        return deserialize_ciphertext(blob, self.context)


# ============== decryptor ==============

class CkksDecryptor:
    """Decryption and noise measurement; requires the secret key."""

    def __init__(self, context: CkksContext, secret_key: SecretKey):
        self.context = context
        self.basis = context.basis
        self._secret = secret_key

    @classmethod
    def from_keys(cls, keys: KeySet) -> "CkksDecryptor":
        return cls(CkksContext(keys.params), keys.secret)

    def decrypt_complex_many(self, cts: Sequence[Ciphertext]) -> np.ndarray:
        """Complex slot values, one row per ciphertext; decryption reduces to q_0."""
        if not cts:
            return np.zeros((0, self.context.slot_count), dtype=np.complex128)
        base = self.basis.group_indices(0)
        rows = []
        for ct in cts:
            idx, count = self.basis.level_indices(ct.level), len(base)
            q = self.basis.moduli(idx[:count])
            rows.append((ct.c0[:count] + ct.c1[:count] * self._secret.ntt[idx[:count]] % q) % q)
        coeffs = self.basis.crt_centered(self.basis.intt(np.stack(rows), base), base)
        scales = np.array([ct.scale for ct in cts])[:, None]
        return self.context.encoder.decode_coefficients(coeffs, 1.0) / scales

    def decrypt_many(self, cts: Sequence[Ciphertext]) -> np.ndarray:
        return self.decrypt_complex_many(cts).real

    def decrypt(self, ct: Ciphertext) -> np.ndarray:
        return self.decrypt_many([ct])[0]

    def measure_noise(self, ct: Ciphertext, expected: Any) -> noise.NoiseReport:
        """Max slot deviation from ``expected`` (zero-padded), in integer units at the ciphertext scale."""
        got = self.decrypt_complex_many([ct])[0]
        want = np.zeros(self.context.slot_count, dtype=np.complex128)
        exp = np.atleast_1d(np.asarray(expected, dtype=np.complex128))
        want[:len(exp)] = exp
        measured = float(np.max(np.abs(got - want))) * ct.scale
        return noise.NoiseReport(measured_noise=measured, bound=ct.noise_bound)
