import numpy as np
import pytest

from src.hefuzz.clustering import (
    ClusterConfig,
    ClusterModel,
    build_model,
    cluster,
    column,
    coverage,
    linear_model,
    load_model,
    nearest_centroid,
    save_model,
    truncated_centroids,
)
from src.hefuzz.encoding import fit_scaler, standardize
from src.hefuzz.errors import FrameCorrupt, IndexOutOfRange, InvalidParams, TooFewPoints


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


class TestConfig:
    def test_default_k(self):
        assert ClusterConfig().resolve_k(400) == 20
        assert ClusterConfig().resolve_k(2) == 1
        assert ClusterConfig(k=7).resolve_k(400) == 7

    @pytest.mark.parametrize("kwargs", [{"k": 0}, {"iterations": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidParams):
            ClusterConfig(**kwargs)


class TestModel:
    def test_shape(self, model, dataset):
        assert model.k == 20
        assert model.num_records == len(dataset.responder_names)
        assert model.match_length == 50
        assert model.centroid_length == 200
        assert model.max_cluster_size == model.row_sizes().max()

    def test_every_record_once(self, model, dataset):
        stored = np.sort(model.index[~model.pad_mask])
        assert np.array_equal(stored, np.arange(len(dataset.responder_names)))

    def test_padding(self, model):
        assert np.all(model.index[model.pad_mask] == -1)
        assert np.all(model.matrix[model.pad_mask] == 0.0)
        # real cells are packed to the left of each row
        for row in model.pad_mask:
            real = np.nonzero(~row)[0]
            assert np.array_equal(real, np.arange(len(real)))

    def test_cells_hold_match_vectors(self, model, dataset):
        match = dataset.encoded().match_normalized
        rows, cols = np.nonzero(~model.pad_mask)
        assert np.allclose(model.matrix[rows, cols], match[model.index[rows, cols]])

    def test_centroids_are_member_means(self, model, dataset):
        std = standardize(dataset.encoded().centroid_normalized, model.scaler)
        labels = model.assignment()[:, 0]
        means = np.stack([std[labels == r].mean(axis=0) for r in range(model.k)])
        # the last Lloyd step may not have converged, so compare directions
        agree = np.sum(unit(means) * model.unit_centroids, axis=1)
        assert np.mean(agree >= 1.0 - 1e-6) >= 0.9
        assert not np.allclose(np.linalg.norm(model.centroids, axis=1), 1.0)
        assert np.allclose(np.linalg.norm(model.unit_centroids, axis=1), 1.0)

    def test_rows_sorted_by_fit(self, model, dataset):
        x = unit(standardize(dataset.encoded().centroid_normalized, model.scaler))
        for r in range(model.k):
            members = model.index[r][~model.pad_mask[r]]
            fit = x[members] @ model.unit_centroids[r]
            assert np.all(np.diff(fit) <= 1e-12)

    def test_members_sit_at_nearest_centroid(self, model, dataset):
        x = unit(standardize(dataset.encoded().centroid_normalized, model.scaler))
        nearest = np.argmax(x @ model.unit_centroids.T, axis=1)
        assigned = model.assignment()[:, 0]
        assert np.mean(nearest == assigned) >= 0.95

    def test_objective_never_increases(self, model):
        history = model.objective_history
        assert len(history) >= 1
        # the mean of raw standardized members only approximates the cosine-optimal direction
        assert all(b <= a * (1 + 1e-3) + 1e-9 for a, b in zip(history, history[1:]))
        assert history[-1] <= history[0]

    def test_deterministic(self, dataset, model, encoding):
        again = build_model(dataset.encoded(), ClusterConfig(seed=3), fingerprint=encoding.fingerprint)
        assert np.array_equal(again.index, model.index)
        assert np.allclose(again.centroids, model.centroids)

    def test_summary(self, model):
        summary = model.summary()
        assert summary["k"] == 20
        assert summary["records"] == model.num_records
        assert 1 <= summary["columns_for_half"] <= summary["columns_for_90pct"] <= model.max_cluster_size


class TestCluster:
    def test_too_few_points(self):
        x = unit(np.random.default_rng(0).normal(size=(3, 4)))
        with pytest.raises(TooFewPoints):
            cluster(x, x, ClusterConfig(k=5))

    def test_separated_groups(self):
        rng = np.random.default_rng(1)
        centers = np.eye(3, 6) * 10
        points = np.vstack([c + rng.normal(scale=0.1, size=(10, 6)) for c in centers])
        m = cluster(points, unit(points), ClusterConfig(k=3, seed=0))
        assert sorted(m.row_sizes().tolist()) == [10, 10, 10]
        assert m.max_cluster_size == 10
        for row in m.index:
            assert len({int(i) // 10 for i in row}) == 1

    def test_single_cluster_centroid_is_the_mean(self, dataset):
        encoded = dataset.encoded()
        std = standardize(encoded.centroid_normalized, fit_scaler(encoded.centroid_normalized))
        m = cluster(std, encoded.match_normalized, ClusterConfig(k=1))
        assert m.max_cluster_size == len(std)
        assert np.allclose(m.centroids[0], std.mean(axis=0))

    def test_centroid_is_mean_of_unequal_norm_members(self):
        # averaging the unit members instead would point along [2, 1, 1]
        points = np.array([[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 0.5], [9.0, 0.0, 0.0]])
        m = cluster(points, unit(points), ClusterConfig(k=1, iterations=3))
        assert np.allclose(m.centroids[0], [2.5, 0.75, 0.125])

    def test_linear_model(self, dataset):
        m = linear_model(dataset.encoded())
        assert m.k == 1
        assert m.max_cluster_size == len(dataset.responder_names)
        assert not m.pad_mask.any()
        assert ClusterModel.linear(dataset.encoded()).max_cluster_size == m.max_cluster_size

    def test_short_centroid_encoding(self, dataset):
        encoded = dataset.encoded()
        short = truncated_centroids(encoded, 50)
        assert short.shape == (len(encoded), 50)
        assert np.allclose(np.linalg.norm(short, axis=1), 1.0)
        m = build_model(encoded, ClusterConfig(k=10), centroid_length=50)
        assert m.centroid_length == 50
        assert m.match_length == 50


class TestAccessors:
    def test_column(self, model):
        assert column(model, 0).shape == (model.k, 50)
        with pytest.raises(IndexOutOfRange):
            column(model, model.max_cluster_size)

    def test_coverage(self, model):
        curve = coverage(model)
        assert len(curve.cumulative) == model.max_cluster_size
        assert curve.cumulative[-1] == model.num_records
        assert curve.cumulative[0] == model.k
        assert curve.columns_for(1.0) == model.max_cluster_size
        assert np.all(np.diff(curve.cumulative) >= 0)

    def test_nearest_centroid_tie_goes_low(self):
        centroids = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        assert nearest_centroid(np.array([2.0, 0.0]), centroids) == 0
        assert nearest_centroid(np.array([0.1, 3.0]), centroids) == 1


class TestPersistence:
    def test_save_load(self, model, tmp_path):
        path = tmp_path / "model.clmd"
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.centroids, model.centroids)
        assert np.array_equal(loaded.matrix, model.matrix)
        assert np.array_equal(loaded.pad_mask, model.pad_mask)
        assert np.array_equal(loaded.index, model.index)
        assert np.array_equal(loaded.scaler.means, model.scaler.means)
        assert loaded.fingerprint == model.fingerprint
        assert loaded.objective_history == model.objective_history

    def test_bad_file(self, tmp_path):
        path = tmp_path / "model.clmd"
        path.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(FrameCorrupt):
            load_model(path)

    def test_truncated_file(self, model, tmp_path):
        path = tmp_path / "model.clmd"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(FrameCorrupt):
            load_model(path)
