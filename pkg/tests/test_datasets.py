import numpy as np
import pytest

from src.hefuzz.datasets import (
    NCVR_MIX,
    SyntheticDatasetSpec,
    default_pools,
    generate_dataset,
    levenshtein,
    load_name_pool,
    perturb,
)
from src.hefuzz.encoding import encode_names
from src.hefuzz.errors import InvalidParams, PoolExhausted


@pytest.mark.parametrize("a, b, distance", [
    ("kitten", "sitting", 3),
    ("", "abc", 3),
    ("mary jones", "mary jones", 0),
    ("mary jones", "mary jnes", 1),
    ("ab", "ba", 2),
])
def test_levenshtein(a, b, distance):
    assert levenshtein(a, b) == distance
    assert levenshtein(b, a) == distance


@pytest.mark.parametrize("distance", [0, 1, 2, 3, 4, 5])
def test_perturb_hits_exact_distance(distance):
    rng = np.random.default_rng(distance)
    variant = perturb("jonathan richardson", distance, rng)
    assert variant is not None
    assert levenshtein("jonathan richardson", variant) == distance
    assert len(variant) >= 3


def test_default_pools():
    given, family = default_pools()
    assert len(given) == 1062
    assert len(family) == 1000
    assert len(set(given)) == len(given)
    assert all(name == name.lower().strip() for name in given[:50])


def test_load_name_pool(tmp_path):
    path = tmp_path / "pool.txt"
    path.write_text("# header\nAnna\n\n anna \nBob  # trailing comment\nbob\n")
    assert load_name_pool(path) == ["anna", "bob"]


@pytest.mark.parametrize("kwargs", [{"n_names": 0}, {"perturbation": 6}, {"perturbation": "census"},
                                    {"n_positives": -1}])
def test_invalid_spec(kwargs):
    with pytest.raises(InvalidParams):
        SyntheticDatasetSpec(**kwargs)


class TestGenerate:
    def test_shape(self, dataset):
        assert len(dataset.responder_names) == 400
        assert len(set(dataset.responder_names)) == 400
        assert len(dataset.queries) == 40
        assert dataset.labels.sum() == 20
        assert [q.query_id for q in dataset.queries] == list(range(40))

    def test_positives_follow_their_source(self, dataset):
        for q in dataset.queries:
            if q.is_positive:
                assert q.distance in NCVR_MIX
                assert levenshtein(q.name, dataset.responder_names[q.source]) == q.distance

    def test_negatives_stay_below_tau(self, dataset):
        negatives = [q.name for q in dataset.queries if not q.is_positive]
        cos = encode_names(negatives, dataset.spec.encoding).match_normalized @ dataset.encoded().match_normalized.T
        assert cos.max() < dataset.spec.tau

    def test_negatives_are_length_matched(self, dataset):
        positive_lengths = [len(q.name) for q in dataset.queries if q.is_positive]
        for q in dataset.queries:
            if not q.is_positive:
                assert min(abs(len(q.name) - n) for n in positive_lengths) <= 2

    def test_deterministic(self, dataset):
        again = generate_dataset(dataset.spec)
        assert again.responder_names == dataset.responder_names
        assert again.query_names == dataset.query_names

    def test_fixed_distance(self):
        data = generate_dataset(SyntheticDatasetSpec(n_names=100, n_positives=15, n_negatives=0,
                                                     perturbation=2, seed=1))
        assert all(q.distance == 2 for q in data.queries)
        assert data.sources.min() >= 0

    def test_pool_exhausted(self, tmp_path):
        given = tmp_path / "given.txt"
        family = tmp_path / "family.txt"
        given.write_text("anna\nbob\n")
        family.write_text("lee\nkim\n")
        with pytest.raises(PoolExhausted):
            generate_dataset(SyntheticDatasetSpec(n_names=5, n_positives=0, n_negatives=0,
                                                  given_names=str(given), family_names=str(family)))
