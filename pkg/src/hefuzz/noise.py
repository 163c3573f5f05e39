"""
Canonical-embedding noise bounds for the CKKS engine.

Bounds are in integer units at a ciphertext's own scale (divide by the scale
for slot units). Ciphertexts carry a running bound computed with these
formulas; the closed-form dot-product bounds are used to check it.
"""
import math
from dataclasses import dataclass


@dataclass(frozen=True)
class NoiseReport:
    """Measured canonical noise against the tracked theoretical bound."""
    measured_noise: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.measured_noise <= self.bound

    @property
    def bits(self) -> float:
        return math.log2(self.measured_noise) if self.measured_noise > 0 else float("-inf")


def clean_bound(ring_degree: int, error_stddev: float, hamming_weight: int) -> float:
    """Fresh encryption noise: 8*sqrt(2)*sigma*N + 6*sigma*sqrt(N) + 16*sigma*sqrt(h*N)."""
    n, sigma, h = ring_degree, error_stddev, hamming_weight
    return 8 * math.sqrt(2) * sigma * n + 6 * sigma * math.sqrt(n) + 16 * sigma * math.sqrt(h * n)


def scale_bound(ring_degree: int, hamming_weight: int) -> float:
    """Rounding noise added by one rescale: sqrt(N/3) * (3 + 8*sqrt(h))."""
    return math.sqrt(ring_degree / 3) * (3 + 8 * math.sqrt(hamming_weight))


def keyswitch_bound(ring_degree: int, error_stddev: float) -> float:
    """8 * sigma * N / sqrt(3)."""
    return 8 * error_stddev * ring_degree / math.sqrt(3)


def relin_bound(ring_degree: int, error_stddev: float, hamming_weight: int,
                digits: int, max_prime: int, special_modulus: int) -> float:
    """
    Relinearization noise before rescale.

    With one gadget digit per prime (each digit below the largest prime),
    the key-switching error is P^-1 * digits * q_max * B_ks plus the
    mod-down rounding.
    """
    ks = keyswitch_bound(ring_degree, error_stddev)
    return digits * max_prime * ks / special_modulus + scale_bound(ring_degree, hamming_weight)


def mult_bound(ring_degree: int, error_stddev: float, hamming_weight: int,
               digits: int, max_prime: int, special_modulus: int, level_modulus: int) -> float:
    """B_mult(l): relinearization noise carried through the rescale by q_l, plus that rescale's rounding."""
    relin = relin_bound(ring_degree, error_stddev, hamming_weight, digits, max_prime, special_modulus)
    return relin / level_modulus + scale_bound(ring_degree, hamming_weight)


def product_bound(nu1: float, b1: float, nu2: float, b2: float) -> float:
    """B_mu = nu1*B2 + nu2*B1 + B1*B2."""
    return nu1 * b2 + nu2 * b1 + b1 * b2


def dot_plain_bound(length: int, plain_inf: float, noise: float, level_modulus: int,
                    ring_degree: int, hamming_weight: int, value_bound: float = 0.0) -> float:
    """
    Closed form for a ct x plaintext dot product of ``length`` terms, after rescale.

    ``plain_inf`` is the largest plaintext magnitude in slot units; the
    plaintext is encoded at the dropped modulus so its integer norm is
    plain_inf * q_l. Pass ``length = N/2`` for the looser full-slot form.
    """
    encoded = plain_inf * level_modulus + 0.5
    pre = length * (encoded * noise + 0.5 * value_bound)
    return pre / level_modulus + scale_bound(ring_degree, hamming_weight)


def dot_cipher_bound(length: int, nu1: float, b1: float, nu2: float, b2: float, b_mult: float,
                     level_modulus: int) -> float:
    """Closed form d*B_mu + d*B_mult(l) for a ct x ct dot product, after rescale."""
    return length * product_bound(nu1, b1, nu2, b2) / level_modulus + length * b_mult
