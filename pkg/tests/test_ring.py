import math

import numpy as np
import pytest
from sympy import isprime

from src.hefuzz.errors import InvalidParams
from src.hefuzz.ring import (
    MAX_PRIME_BITS,
    RnsBasis,
    cached_basis,
    generate_modulus_groups,
    level_count,
    modular_matmul,
)


def negacyclic_product(a, b, p):
    n = len(a)
    out = [0] * n
    for i in range(n):
        for j in range(n):
            term = int(a[i]) * int(b[j])
            if i + j < n:
                out[i + j] += term
            else:
                out[i + j - n] -= term
    return [v % p for v in out]


class TestModulusGroups:
    def test_primes_are_ntt_friendly(self):
        groups = generate_modulus_groups((60, 40, 40, 40, 60), 1024)
        flat = [p for g in groups for p in g]
        assert len(flat) == len(set(flat))
        for p in flat:
            assert isprime(p)
            assert p % 2048 == 1
            assert p.bit_length() <= MAX_PRIME_BITS + 1

    def test_group_products_near_target(self):
        bits = (60, 40, 40, 40, 60)
        groups = generate_modulus_groups(bits, 1024)
        assert [len(g) for g in groups] == [2, 2, 2, 2, 2]
        for target, group in zip(bits, groups):
            assert abs(math.log2(math.prod(group)) - target) < 1.0

    def test_oversized_modulus(self):
        with pytest.raises(InvalidParams):
            generate_modulus_groups((70,), 16)

    def test_modulus_too_small_for_ring(self):
        with pytest.raises(InvalidParams):
            generate_modulus_groups((12,), 8192)

    def test_level_count(self):
        assert level_count((60, 40, 40, 40, 60)) == 4


class TestBasis:
    @pytest.fixture(scope="class")
    def basis(self):
        return RnsBasis(16, (60, 40, 60))

    def test_rejects_bad_degree(self):
        with pytest.raises(InvalidParams):
            RnsBasis(12, (60, 40, 60))

    def test_rejects_short_chain(self):
        with pytest.raises(InvalidParams):
            RnsBasis(16, (60, 60))

    def test_levels(self, basis):
        assert basis.top_level == 1
        assert len(basis.level_indices(0)) == 2
        assert len(basis.level_indices(1)) == 4
        assert list(basis.special_indices()) == [4, 5]

    def test_ntt_round_trip(self, basis):
        idx = basis.level_indices(1)
        rng = np.random.default_rng(1)
        a = rng.integers(0, basis.primes[idx][:, None], size=(len(idx), 16), dtype=np.uint64)
        assert np.array_equal(basis.intt(basis.ntt(a, idx), idx), a)

    def test_ntt_multiplies_negacyclically(self, basis):
        idx = basis.level_indices(0)
        rng = np.random.default_rng(2)
        a = rng.integers(-50, 50, size=16)
        b = rng.integers(-50, 50, size=16)
        fa = basis.ntt(basis.to_rns(a, idx), idx)
        fb = basis.ntt(basis.to_rns(b, idx), idx)
        q = basis.moduli(idx)
        prod = basis.intt(fa * fb % q, idx)
        for row, i in enumerate(idx):
            p = basis.prime_ints[i]
            assert [int(v) for v in prod[row]] == negacyclic_product(a, b, p)

    def test_crt_centered(self, basis):
        idx = basis.group_indices(0)
        x = np.array([0, 1, -1, 2 ** 50, -(2 ** 50) + 7] + [3] * 11, dtype=np.int64)
        assert np.array_equal(basis.crt_centered(basis.to_rns(x, idx), idx), x)

    def test_divide_round(self, basis):
        keep, drop = basis.level_indices(0), basis.group_indices(1)
        rng = np.random.default_rng(3)
        x = rng.integers(-(2 ** 50), 2 ** 50, size=16)
        both = np.concatenate([keep, drop])
        ntt = basis.ntt(basis.to_rns(x, both), both)
        out = basis.divide_round(ntt[:len(keep)], ntt[len(keep):], keep, drop)
        got = basis.crt_centered(basis.intt(out, keep), keep)
        q_drop = basis.group_modulus(1)
        want = np.array([round(int(v) / q_drop) for v in x])
        assert np.max(np.abs(got - want)) <= 1

    def test_cached_basis_is_shared(self):
        assert cached_basis(16, (60, 40, 60)) is cached_basis(16, (60, 40, 60))


def test_modular_matmul_matches_big_integers():
    primes = np.array([1073750017, 1073815553], dtype=np.uint64)
    rng = np.random.default_rng(4)
    lhs = rng.integers(0, primes[:, None, None], size=(2, 3, 5), dtype=np.uint64)
    rhs = rng.integers(0, primes[:, None, None], size=(2, 5, 7), dtype=np.uint64)
    got = modular_matmul(lhs, rhs, primes, chunk=4)
    for t, p in enumerate(primes.tolist()):
        for i in range(3):
            for j in range(7):
                want = sum(int(lhs[t, i, m]) * int(rhs[t, m, j]) for m in range(5)) % p
                assert int(got[t, i, j]) == want
