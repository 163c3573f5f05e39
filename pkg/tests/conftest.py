"""Shared fixtures: small CKKS parameters, one key set and one synthetic dataset per session."""
import pytest

from src.hefuzz.ckks import HeParams, keygen
from src.hefuzz.clustering import ClusterConfig, build_model
from src.hefuzz.datasets import SyntheticDatasetSpec, generate_dataset
from src.hefuzz.encoding import EncodingParams


@pytest.fixture(scope="session")
def encoding() -> EncodingParams:
    return EncodingParams()


@pytest.fixture(scope="session")
def small_params() -> HeParams:
    """Protocol modulus chain on a small ring: fast, same level structure."""
    return HeParams.for_protocol(ring_degree=1024)


@pytest.fixture(scope="session")
def small_keys(small_params):
    return keygen(small_params, seed=11)


@pytest.fixture(scope="session")
def dataset(encoding):
    spec = SyntheticDatasetSpec(n_names=400, n_positives=20, n_negatives=20, seed=5, encoding=encoding)
    return generate_dataset(spec)


@pytest.fixture(scope="session")
def model(dataset, encoding):
    return build_model(dataset.encoded(), ClusterConfig(seed=3), fingerprint=encoding.fingerprint)
