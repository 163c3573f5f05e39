import numpy as np
import pytest

from src.hefuzz.ckks import HeParams
from src.hefuzz.errors import FrameCorrupt, LevelExhausted, LevelMismatch, TooManySlots
from src.hefuzz.oracle import OracleDecryptor, OracleEvaluator


@pytest.fixture(scope="module")
def params():
    return HeParams.for_protocol(ring_degree=256)


@pytest.fixture(scope="module")
def oracle(params):
    return OracleEvaluator(params)


def test_exact_arithmetic(oracle, params):
    a = np.array([0.5, -0.25, 1.0])
    b = np.array([2.0, 4.0, -1.0])
    dec = OracleDecryptor(params)
    ca, cb = oracle.encrypt(a), oracle.encrypt(b)
    assert np.array_equal(dec.decrypt(oracle.add(ca, cb))[:3], a + b)
    assert np.array_equal(dec.decrypt(oracle.mul_plain(ca, b))[:3], a * b)
    assert np.array_equal(dec.decrypt(oracle.add_plain(ca, -0.5))[:3], a - 0.5)
    dot = oracle.dot_ct_ct(oracle.encrypt_many(np.stack([a, b])), oracle.encrypt_many(np.stack([b, a])))
    assert np.allclose(dec.decrypt(dot)[:3], 2 * a * b)


def test_levels_follow_ckks(oracle):
    ct = oracle.encrypt([1.0])
    assert ct.level == oracle.top_level
    assert oracle.mul_plain(ct, 2.0).level == ct.level - 1
    bottom = oracle.drop_level(ct, 0)
    with pytest.raises(LevelExhausted):
        oracle.mul_plain(bottom, 2.0)
    with pytest.raises(LevelMismatch):
        oracle.add(ct, bottom)


def test_slot_limit(oracle, params):
    with pytest.raises(TooManySlots):
        oracle.encrypt(np.zeros(params.slot_count + 1))


def test_fixed_size_serialization(oracle):
    small = oracle.serialize(oracle.encrypt([1.0]))
    large = oracle.serialize(oracle.encrypt(np.ones(100)))
    assert len(small) == len(large)
    restored = oracle.deserialize(large)
    assert restored.slots == 100
    assert np.array_equal(restored.values[:100], np.ones(100))
    with pytest.raises(FrameCorrupt):
        oracle.deserialize(large[:-1])


def test_noise_is_zero(oracle, params):
    report = OracleDecryptor(params).measure_noise(oracle.encrypt([0.25, 0.5]), [0.25, 0.5])
    assert report.measured_noise == 0.0
    assert report.within_bound
