"""
Offline responder-side clustering.

Cosine K-means over standardized centroid-length signatures, then a padded
k x M matrix of normalized match-length signatures: one row per cluster,
M = largest cluster, dummy cells are all-zero vectors. The protocol
consumes the matrix column by column.
"""
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .encoding import EncodedNames, ScalerParams, fit_scaler, normalize, standardize
from .errors import DimensionMismatch, FrameCorrupt, IndexOutOfRange, InvalidParams, TooFewPoints

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"CLMD"
MODEL_VERSION = 2
_MODEL_HEADER = struct.Struct("<4sHIIHHII")


@dataclass(frozen=True)
class ClusterConfig:
    """K-means settings. ``k=None`` means round(sqrt(n))."""
    k: Optional[int] = None
    iterations: int = 20
    seed: int = 7

    def __post_init__(self) -> None:
        if self.k is not None and self.k < 1:
            raise InvalidParams(f"k must be >= 1, got {self.k}")
        if self.iterations < 1:
            raise InvalidParams(f"iterations must be >= 1, got {self.iterations}")

    def resolve_k(self, n: int) -> int:
        return self.k if self.k is not None else max(1, int(round(math.sqrt(n))))

    def to_dict(self) -> dict:
        return {"k": self.k, "iterations": self.iterations, "seed": self.seed}


@dataclass(frozen=True)
class CoverageCurve:
    """cumulative[j] = real names in columns 0..j."""
    cumulative: np.ndarray

    def fraction(self) -> np.ndarray:
        total = self.cumulative[-1] if len(self.cumulative) else 0
        return self.cumulative / total if total else self.cumulative.astype(np.float64)

    def columns_for(self, fraction: float) -> int:
        """Smallest number of leading columns covering ``fraction`` of the names."""
        frac = self.fraction()
        hits = np.nonzero(frac >= fraction - 1e-12)[0]
        return int(hits[0]) + 1 if len(hits) else len(frac)


@dataclass
class ClusterModel:
    """
    Centroids (member means in standardized space) plus the padded match matrix.

    ``index[row, col]`` is the dataset index stored in a cell, -1 for dummies.
    """
    centroids: np.ndarray
    matrix: np.ndarray
    pad_mask: np.ndarray
    index: np.ndarray
    scaler: ScalerParams
    fingerprint: int = 0
    objective_history: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def max_cluster_size(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_records(self) -> int:
        return int(np.count_nonzero(~self.pad_mask))

    @property
    def match_length(self) -> int:
        return self.matrix.shape[2]

    @property
    def centroid_length(self) -> int:
        return self.centroids.shape[1]

    @property
    def unit_centroids(self) -> np.ndarray:
        """Centroid directions; dot products against these are cosines up to the query norm."""
        return _unit_rows(self.centroids)

    def assignment(self) -> np.ndarray:
        """(n, 2) array: dataset index -> (row, col)."""
        out = np.full((self.num_records, 2), -1, dtype=np.int64)
        rows, cols = np.nonzero(~self.pad_mask)
        out[self.index[rows, cols]] = np.stack([rows, cols], axis=1)
        return out

    @classmethod
    def linear(cls, encoded: EncodedNames, fingerprint: int = 0) -> "ClusterModel":
        """Linear mode: a single row holding every record."""
        return linear_model(encoded, fingerprint)

    def row_sizes(self) -> np.ndarray:
        return np.count_nonzero(~self.pad_mask, axis=1)

    def summary(self) -> dict:
        curve = coverage(self)
        return {
            "k": self.k,
            "max_cluster_size": self.max_cluster_size,
            "records": self.num_records,
            "columns_for_half": curve.columns_for(0.5),
            "columns_for_90pct": curve.columns_for(0.9),
        }


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def _kmeanspp(std: np.ndarray, x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with cosine distance; returns the chosen standardized points."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    dist = np.clip(1.0 - x @ x[chosen[0]], 0.0, None)
    for _ in range(1, k):
        weights = dist ** 2
        total = weights.sum()
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), chosen)
            pick = int(rng.choice(remaining))
        else:
            pick = int(rng.choice(n, p=weights / total))
        chosen.append(pick)
        dist = np.minimum(dist, np.clip(1.0 - x @ x[pick], 0.0, None))
    return std[chosen].copy()


def _repair_empty(labels: np.ndarray, sims: np.ndarray, centroids: np.ndarray, std: np.ndarray,
                  x: np.ndarray) -> None:
    """Give each empty cluster the worst-fitting point of a cluster with spare members (in place)."""
    k = centroids.shape[0]
    for empty in np.nonzero(np.bincount(labels, minlength=k) == 0)[0]:
        counts = np.bincount(labels, minlength=k)
        fit = sims[np.arange(len(labels)), labels]
        donors = counts[labels] > 1
        if not donors.any():
            break
        candidates = np.nonzero(donors)[0]
        point = candidates[np.argmin(fit[candidates])]
        labels[point] = empty
        centroids[empty] = std[point]
        sims[:, empty] = x @ x[point]


def _update_centroids(std: np.ndarray, labels: np.ndarray, previous: np.ndarray) -> np.ndarray:
    k = previous.shape[0]
    sums = np.zeros_like(previous)
    np.add.at(sums, labels, std)
    counts = np.bincount(labels, minlength=k)[:, None]
    return np.where(counts > 0, sums / np.maximum(counts, 1), previous)


def cluster(
    dataset_el200_std: np.ndarray,
    dataset_el50_norm: np.ndarray,
    cfg: ClusterConfig,
    scaler: Optional[ScalerParams] = None,
    fingerprint: int = 0,
) -> ClusterModel:
    """
    Lloyd iterations with cosine assignment; build the padded match matrix.

    Assignment is by cosine (both sides L2-normalized); each centroid is the
    arithmetic mean of its members' standardized vectors. The stored centroids
    are therefore not unit-norm; ``ClusterModel.unit_centroids`` is what gets scored.
    """
    std = np.asarray(dataset_el200_std, dtype=np.float64)
    match = np.asarray(dataset_el50_norm, dtype=np.float64)
    if len(std) != len(match):
        raise DimensionMismatch(f"{len(std)} centroid vectors but {len(match)} match vectors")
    n = len(std)
    k = cfg.resolve_k(n)
    if n < k:
        raise TooFewPoints(f"{n} points cannot form {k} clusters")

    x = _unit_rows(std)
    rng = np.random.default_rng(cfg.seed)
    centroids = _kmeanspp(std, x, k, rng)
    labels: Optional[np.ndarray] = None
    history: List[float] = []
    sims = x @ _unit_rows(centroids).T

    for iteration in range(cfg.iterations):
        sims = x @ _unit_rows(centroids).T
        new_labels = np.argmax(sims, axis=1)
        _repair_empty(new_labels, sims, centroids, std, x)
        objective = float(np.sum(1.0 - sims[np.arange(n), new_labels]))
        history.append(objective)
        logger.debug(f"[CLUSTER] iteration {iteration}: objective={objective:.6f}")
        if labels is not None and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        centroids = _update_centroids(std, labels, centroids)
        sims = x @ _unit_rows(centroids).T

    assert labels is not None
    if len(history) == cfg.iterations:
        # not converged: align members with the final centroids queries will see
        labels = np.argmax(sims, axis=1)
        _repair_empty(labels, sims, centroids, std, x)
        sims = x @ _unit_rows(centroids).T
    fit = sims[np.arange(n), labels]
    sizes = np.bincount(labels, minlength=k)
    m = int(sizes.max())

    matrix = np.zeros((k, m, match.shape[1]), dtype=np.float64)
    pad_mask = np.ones((k, m), dtype=bool)
    index = np.full((k, m), -1, dtype=np.int64)
    for row in range(k):
        members = np.nonzero(labels == row)[0]
        order = members[np.lexsort((members, -fit[members]))]
        matrix[row, :len(order)] = match[order]
        pad_mask[row, :len(order)] = False
        index[row, :len(order)] = order

    logger.info(f"[CLUSTER] n={n} k={k} M={m} iterations={len(history)}")
    return ClusterModel(
        centroids=centroids,
        matrix=matrix,
        pad_mask=pad_mask,
        index=index,
        scaler=scaler if scaler is not None else ScalerParams.identity(std.shape[1]),
        fingerprint=fingerprint,
        objective_history=history,
    )


def truncated_centroids(encoded: EncodedNames, length: int) -> np.ndarray:
    """Normalized centroid signatures restricted to their first ``length`` hash indices."""
    if length >= encoded.centroid_signatures.shape[1]:
        return encoded.centroid_normalized
    return normalize(encoded.centroid_signatures[:, :length])


def build_model(encoded: EncodedNames, cfg: ClusterConfig, fingerprint: int = 0,
                centroid_length: Optional[int] = None) -> ClusterModel:
    """
    Fit the scaler on the responder's normalized centroid signatures, then cluster.

    ``centroid_length`` clusters on a shorter prefix of the centroid signature
    (plaintext experiments only; the protocol always sends full-length queries).
    """
    centroids = truncated_centroids(encoded, centroid_length or encoded.centroid_signatures.shape[1])
    scaler = fit_scaler(centroids)
    std = standardize(centroids, scaler)
    return cluster(std, encoded.match_normalized, cfg, scaler=scaler, fingerprint=fingerprint)


def linear_model(encoded: EncodedNames, fingerprint: int = 0) -> ClusterModel:
    """No-clustering baseline: one row holding every record."""
    return build_model(encoded, ClusterConfig(k=1, iterations=1), fingerprint=fingerprint)


def nearest_centroid(query_std: np.ndarray, centroids: np.ndarray) -> int:
    """Index of the most cosine-similar centroid; ties go to the lowest index."""
    q = np.asarray(query_std, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    if q.shape[-1] != c.shape[-1]:
        raise DimensionMismatch(f"query length {q.shape[-1]} vs centroid length {c.shape[-1]}")
    return int(np.argmax(_unit_rows(c) @ _unit_rows(q)))


def column(model: ClusterModel, j: int) -> np.ndarray:
    """The j-th cell of every row, dummies included: (k, match_length)."""
    if not 0 <= j < model.max_cluster_size:
        raise IndexOutOfRange(f"column {j} outside [0, {model.max_cluster_size})")
    return model.matrix[:, j, :]


def coverage(model: ClusterModel) -> CoverageCurve:
    return CoverageCurve(cumulative=np.cumsum(np.count_nonzero(~model.pad_mask, axis=0)))


# ============== persistence ==============

def save_model(model: ClusterModel, path: Union[str, Path]) -> None:
    k, m, p_match = model.matrix.shape
    header = _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, k, m, p_match, model.centroid_length,
                                model.fingerprint & 0xFFFFFFFF, len(model.objective_history))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(model.centroids, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.matrix, dtype="<f8").tobytes())
        f.write(np.packbits(model.pad_mask.ravel(), bitorder="little").tobytes())
        f.write(np.ascontiguousarray(model.index, dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(model.scaler.means, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.scaler.stds, dtype="<f8").tobytes())
        f.write(np.asarray(model.objective_history, dtype="<f8").tobytes())


def load_model(path: Union[str, Path]) -> ClusterModel:
    data = Path(path).read_bytes()
    if len(data) < _MODEL_HEADER.size:
        raise FrameCorrupt(f"{path}: too short for a cluster model")
    magic, version, k, m, p_match, p_centroid, fingerprint, iters = _MODEL_HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise FrameCorrupt(f"{path}: not a version-{MODEL_VERSION} cluster model")

    offset = _MODEL_HEADER.size

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal offset
        size = count * np.dtype(dtype).itemsize
        if offset + size > len(data):
            raise FrameCorrupt(f"{path}: truncated cluster model")
        arr = np.frombuffer(data[offset:offset + size], dtype=dtype)
        offset += size
        return arr

    centroids = take(k * p_centroid, "<f8").reshape(k, p_centroid).astype(np.float64)
    matrix = take(k * m * p_match, "<f8").reshape(k, m, p_match).astype(np.float64)
    packed = take((k * m + 7) // 8, "u1")
    pad_mask = np.unpackbits(packed, bitorder="little")[:k * m].reshape(k, m).astype(bool)
    index = take(k * m, "<i4").reshape(k, m).astype(np.int64)
    means = take(p_centroid, "<f8")
    stds = take(p_centroid, "<f8")
    history = take(iters, "<f8").tolist()
    if offset != len(data):
        raise FrameCorrupt(f"{path}: {len(data) - offset} trailing bytes")
    return ClusterModel(
        centroids=centroids, matrix=matrix, pad_mask=pad_mask, index=index,
        scaler=ScalerParams(means=means, stds=stds), fingerprint=fingerprint, objective_history=history,
    )
