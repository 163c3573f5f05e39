"""
RNS arithmetic over Z_Q[X]/(X^N + 1).

Each chain modulus is a group of NTT-friendly primes (p = 1 mod 2N, p < 2^31)
so that every residue product fits in an unsigned 64-bit integer. Polynomials
are arrays shaped (..., primes, N); transforms are vectorized across primes.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from sympy import isprime
from sympy.ntheory import primitive_root

from .errors import InvalidParams

logger = logging.getLogger(__name__)

MAX_PRIME_BITS = 30
MAX_GROUP_BITS = 60
_PRIME_CEILING = 1 << 31


def _nearest_ntt_prime(target: float, step: int, used: set) -> int:
    """Closest prime p = 1 mod step to ``target`` that is not already used."""
    k0 = max(1, int(round((target - 1) / step)))
    for delta in range(0, 1 << 20):
        for k in ((k0 + delta, k0 - delta) if delta else (k0,)):
            if k < 1:
                continue
            p = k * step + 1
            if p >= _PRIME_CEILING or p in used:
                continue
            if isprime(p):
                return p
    raise InvalidParams(f"no NTT-friendly prime near {target:.0f} with step {step}")


def generate_modulus_groups(modulus_bits: Sequence[int], ring_degree: int) -> List[List[int]]:
    """
    Realize each requested modulus size as a group of primes whose product is close to 2^bits.

    A b-bit modulus becomes ceil(b/30) primes; all primes are distinct.
    """
    step = 2 * ring_degree
    used: set = set()
    groups: List[List[int]] = []
    for bits in modulus_bits:
        if not 2 <= bits <= MAX_GROUP_BITS:
            raise InvalidParams(f"modulus sizes must be in [2, {MAX_GROUP_BITS}] bits, got {bits}")
        parts = math.ceil(bits / MAX_PRIME_BITS)
        if bits / parts <= math.log2(step) + 1:
            raise InvalidParams(f"{bits}-bit modulus too small for ring degree {ring_degree}")
        remaining = float(bits)
        group: List[int] = []
        for i in range(parts):
            target_bits = remaining / (parts - i)
            p = _nearest_ntt_prime(2.0 ** target_bits, step, used)
            used.add(p)
            group.append(p)
            remaining -= math.log2(p)
        groups.append(group)
    return groups


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _powers(base: int, count: int, p: int) -> np.ndarray:
    out = np.empty(count, dtype=np.uint64)
    acc = 1
    for i in range(count):
        out[i] = acc
        acc = acc * base % p
    return out


@dataclass(frozen=True)
class _PrimeTables:
    psi: np.ndarray           # psi^i
    psi_inv_n: np.ndarray     # psi^-i * N^-1
    fwd_stages: Tuple[np.ndarray, ...]
    inv_stages: Tuple[np.ndarray, ...]


def _prime_tables(p: int, n: int) -> _PrimeTables:
    g = int(primitive_root(p))
    psi = pow(g, (p - 1) // (2 * n), p)
    if pow(psi, n, p) != p - 1:
        raise InvalidParams(f"failed to find a primitive 2N-th root modulo {p}")
    psi_inv = pow(psi, -1, p)
    omega = psi * psi % p
    omega_inv = psi_inv * psi_inv % p
    n_inv = pow(n, -1, p)

    psi_pows = _powers(psi, n, p)
    psi_inv_n = (_powers(psi_inv, n, p) * np.uint64(n_inv)) % np.uint64(p)
    omega_pows = _powers(omega, n, p)
    omega_inv_pows = _powers(omega_inv, n, p)

    fwd, inv = [], []
    m = 1
    while m < n:
        stride = n // (2 * m)
        fwd.append(omega_pows[::stride][:m].copy())
        inv.append(omega_inv_pows[::stride][:m].copy())
        m *= 2
    return _PrimeTables(psi=psi_pows, psi_inv_n=psi_inv_n, fwd_stages=tuple(fwd), inv_stages=tuple(inv))


class RnsBasis:
    """
    The full prime chain of a parameter set plus NTT tables for every prime.

    ``groups[0..L]`` are data moduli (q_0 .. q_L); ``groups[-1]`` is the
    special key-switching modulus P. Prime indices are positions in the
    flattened chain.
    """

    def __init__(self, ring_degree: int, modulus_bits: Sequence[int]):
        if ring_degree < 8 or ring_degree & (ring_degree - 1):
            raise InvalidParams(f"ring degree must be a power of two >= 8, got {ring_degree}")
        if len(modulus_bits) < 3:
            raise InvalidParams("modulus chain needs at least 3 entries (two data levels plus the special modulus)")
        self.ring_degree = ring_degree
        self.groups = generate_modulus_groups(modulus_bits, ring_degree)
        flat = [p for g in self.groups for p in g]
        self.primes = np.array(flat, dtype=np.uint64)
        self.prime_ints: Tuple[int, ...] = tuple(flat)

        bounds = np.cumsum([0] + [len(g) for g in self.groups])
        self._group_slices = [np.arange(bounds[i], bounds[i + 1]) for i in range(len(self.groups))]

        tables = [_prime_tables(p, ring_degree) for p in flat]
        self._psi = np.stack([t.psi for t in tables])
        self._psi_inv_n = np.stack([t.psi_inv_n for t in tables])
        stages = len(tables[0].fwd_stages)
        self._fwd = [np.stack([t.fwd_stages[s] for t in tables]) for s in range(stages)]
        self._inv = [np.stack([t.inv_stages[s] for t in tables]) for s in range(stages)]
        self._bitrev = _bit_reverse_permutation(ring_degree)
        logger.debug(f"RNS basis N={ring_degree}: groups={self.groups}")

    # ---------- index helpers ----------

    @property
    def top_level(self) -> int:
        return len(self.groups) - 2

    def group_modulus(self, level: int) -> int:
        """Integer value of the data modulus q_level (the product of its primes)."""
        return math.prod(self.groups[level])

    @property
    def special_modulus(self) -> int:
        return math.prod(self.groups[-1])

    def group_indices(self, group: int) -> np.ndarray:
        return self._group_slices[group]

    def level_indices(self, level: int) -> np.ndarray:
        """Prime indices of q_0 .. q_level."""
        return np.concatenate(self._group_slices[:level + 1])

    def special_indices(self) -> np.ndarray:
        return self._group_slices[-1]

    def moduli(self, idx: np.ndarray) -> np.ndarray:
        """Primes as a column (len(idx), 1) for broadcasting against (..., l, N)."""
        return self.primes[idx][:, None]

    # ---------- conversions ----------

    def to_rns(self, coeffs: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Signed int64 coefficients (..., N) -> residues (..., l, N)."""
        q = self.primes[idx].astype(np.int64)[:, None]
        return np.mod(np.asarray(coeffs, dtype=np.int64)[..., None, :], q).astype(np.uint64)

    def centered(self, residues: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Residues in [0, p) -> int64 representatives in (-p/2, p/2]."""
        q = self.primes[idx][:, None].astype(np.int64)
        r = residues.astype(np.int64)
        return np.where(r > q // 2, r - q, r)

    def crt_centered(self, coeffs: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Coefficient-domain residues (..., l, N) over a group -> centered int64 (..., N)."""
        primes = [self.prime_ints[i] for i in idx]
        modulus = primes[0]
        result = coeffs[..., 0, :].astype(np.int64)
        for t in range(1, len(primes)):
            p = primes[t]
            if modulus * p >= (1 << 62):
                raise InvalidParams("CRT group too large for 64-bit reconstruction")
            inv = pow(modulus % p, -1, p)
            diff = np.mod(coeffs[..., t, :].astype(np.int64) - np.mod(result, p), p)
            result = result + modulus * (diff * inv % p)
            modulus *= p
        return np.where(result > modulus // 2, result - modulus, result)

    # ---------- transforms ----------

    def _cyclic(self, a: np.ndarray, idx: np.ndarray, stages: List[np.ndarray]) -> np.ndarray:
        n = self.ring_degree
        lead = a.shape[:-1]
        qb = self.primes[idx][:, None, None]
        a = a[..., self._bitrev]
        m = 1
        for table in stages:
            w = table[idx][:, None, :]
            blocks = a.reshape(*lead, n // (2 * m), 2, m)
            u = blocks[..., 0, :]
            v = blocks[..., 1, :] * w % qb
            s = u + v
            s = np.where(s >= qb, s - qb, s)
            d = u + qb - v
            d = np.where(d >= qb, d - qb, d)
            a = np.stack((s, d), axis=-2).reshape(*lead, n)
            m *= 2
        return a

    def ntt(self, a: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Negacyclic forward transform of residues (..., l, N)."""
        q = self.moduli(idx)
        return self._cyclic(a * self._psi[idx] % q, idx, self._fwd)

    def intt(self, a: np.ndarray, idx: np.ndarray) -> np.ndarray:
        q = self.moduli(idx)
        return self._cyclic(a, idx, self._inv) * self._psi_inv_n[idx] % q

    # ---------- modulus switching ----------

    def divide_round(self, keep: np.ndarray, drop: np.ndarray, keep_idx: np.ndarray, drop_idx: np.ndarray) -> np.ndarray:
        """
        round(x / Q_drop) over the kept primes, for x given in NTT form on keep + drop.

        Used both for rescaling (drop the top data modulus) and for the
        key-switching mod-down (drop the special modulus).
        """
        q = self.moduli(keep_idx)
        q_drop = math.prod(self.prime_ints[i] for i in drop_idx)
        centered = self.crt_centered(self.intt(drop, drop_idx), drop_idx)
        lifted = self.ntt(self.to_rns(centered, keep_idx), keep_idx)
        inv = np.array([pow(q_drop % self.prime_ints[i], -1, self.prime_ints[i]) for i in keep_idx], dtype=np.uint64)[:, None]
        return (keep + q - lifted) % q * inv % q


def modular_matmul(lhs: np.ndarray, rhs: np.ndarray, moduli: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """
    Batched (lhs @ rhs) mod p per prime.

    lhs: (l, a, b), rhs: (l, b, n), residues below 2^31; moduli: (l,).
    Operands are split into 15/16-bit limbs so that each float64 product sum
    stays exact, then recombined modulo p. Columns of rhs are processed in
    chunks to bound temporary memory.
    """
    if lhs.shape[-1] >= (1 << 21):
        raise InvalidParams("inner dimension too large for exact limb products")
    mask = np.uint64(0x7FFF)
    shift = np.uint64(15)
    l_lo = (lhs & mask).astype(np.float64)
    l_hi = (lhs >> shift).astype(np.float64)
    q = moduli.astype(np.uint64)[:, None, None]
    two30 = np.uint64(1 << 30) % q

    out = np.empty(lhs.shape[:-1] + rhs.shape[-1:], dtype=np.uint64)
    for start in range(0, rhs.shape[-1], chunk):
        part = rhs[..., start:start + chunk]
        r_lo = (part & mask).astype(np.float64)
        r_hi = (part >> shift).astype(np.float64)
        hh = np.matmul(l_hi, r_hi).astype(np.uint64) % q
        mid = (np.matmul(l_hi, r_lo) + np.matmul(l_lo, r_hi)).astype(np.uint64) % q
        ll = np.matmul(l_lo, r_lo).astype(np.uint64) % q
        acc = hh * two30 % q
        acc = (acc + (mid << shift) % q) % q
        out[..., start:start + chunk] = (acc + ll) % q
    return out


@lru_cache(maxsize=8)
def cached_basis(ring_degree: int, modulus_bits: Tuple[int, ...]) -> RnsBasis:
    """Bases are deterministic in their parameters; share one per parameter set."""
    return RnsBasis(ring_degree, modulus_bits)


def level_count(modulus_bits: Iterable[int]) -> int:
    return len(list(modulus_bits)) - 1
