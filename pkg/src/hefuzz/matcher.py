"""
Plaintext reference matcher.

Same signatures, same cluster model, same threshold as the encrypted
protocol, computed with exact cosine similarity. Verdicts agree with the
protocol everywhere outside the HE dead-band around tau.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .clustering import ClusterModel, truncated_centroids
from .encoding import EncodingParams, encode_names, standardize
from .protocol import MatchVerdict

logger = logging.getLogger(__name__)

DEAD_BAND = 1e-3


@dataclass
class PlaintextQueries:
    names: List[str]
    centroid_vectors: np.ndarray   # standardized, not re-normalized
    match_vectors: np.ndarray      # normalized


def flagged_records(model: ClusterModel, verdict: MatchVerdict) -> List[int]:
    """Responder record indices behind a verdict's positive columns."""
    if verdict.cluster < 0:
        return []
    cells = model.index[verdict.cluster, verdict.positive_columns] if verdict.positive_columns else []
    return [int(i) for i in cells if i >= 0]


class PlaintextMatcher:
    def __init__(self, model: ClusterModel, encoding: Optional[EncodingParams] = None, tau: float = 0.9):
        self.model = model
        self.encoding = encoding or EncodingParams()
        self.tau = tau

    def prepare(self, names: Sequence[str]) -> PlaintextQueries:
        encoded = encode_names(names, self.encoding, match_length=self.model.match_length)
        centroid = truncated_centroids(encoded, self.model.centroid_length)
        return PlaintextQueries(
            names=list(encoded.names),
            centroid_vectors=standardize(centroid, self.model.scaler),
            match_vectors=encoded.match_normalized,
        )

    def centroid_scores(self, queries: PlaintextQueries) -> np.ndarray:
        """(k, batch) dot products, the plaintext of the protocol's centroid phase."""
        return self.model.unit_centroids @ queries.centroid_vectors.T

    def select(self, queries: PlaintextQueries) -> np.ndarray:
        return np.argmax(self.centroid_scores(queries), axis=0)

    def column_cosines(self, queries: PlaintextQueries, clusters: Optional[np.ndarray] = None) -> np.ndarray:
        """(batch, M) cosine of each query with every cell of its selected row; dummies give 0."""
        clusters = self.select(queries) if clusters is None else clusters
        rows = self.model.matrix[clusters]
        return np.einsum("bmd,bd->bm", rows, queries.match_vectors)

    def match(self, names: Sequence[str], early_exit: bool = False) -> List[MatchVerdict]:
        queries = self.prepare(names)
        clusters = self.select(queries)
        cosines = self.column_cosines(queries, clusters)
        return self.verdicts_from(cosines, clusters, queries.names, self.tau, early_exit)

    @staticmethod
    def verdicts_from(cosines: np.ndarray, clusters: np.ndarray, names: Sequence[str], tau: float,
                      early_exit: bool = False) -> List[MatchVerdict]:
        columns = cosines.shape[1]
        out = []
        for b, row in enumerate(cosines):
            positive = np.nonzero(row > tau)[0]
            if early_exit and len(positive):
                positive = positive[:1]
                consumed = int(positive[0]) + 1
            else:
                consumed = columns
            out.append(MatchVerdict(
                query_id=b, matched=bool(len(positive)), columns_consumed=consumed,
                positive_columns=[int(j) for j in positive], cluster=int(clusters[b]), name=names[b],
            ))
        return out

    def dead_band(self, names: Sequence[str], width: float = DEAD_BAND) -> np.ndarray:
        """Queries with a cell cosine within ``width`` of tau in their selected cluster."""
        cosines = self.column_cosines(self.prepare(names))
        return np.any(np.abs(cosines - self.tau) <= width, axis=1)

    def centroid_ties(self, names: Sequence[str], width: float = DEAD_BAND) -> np.ndarray:
        """Queries whose two best centroid scores are within ``width`` of each other."""
        scores = self.centroid_scores(self.prepare(names))
        if scores.shape[0] < 2:
            return np.zeros(len(names), dtype=bool)
        top = np.sort(scores, axis=0)[-2:]
        return (top[1] - top[0]) <= width

    def uncertain(self, names: Sequence[str], width: float = DEAD_BAND) -> np.ndarray:
        """Either kind of query whose verdict may legitimately flip under HE error."""
        return self.dead_band(names, width) | self.centroid_ties(names, width)

    def flagged(self, verdicts: Sequence[MatchVerdict]) -> List[List[int]]:
        return [flagged_records(self.model, v) for v in verdicts]


def exhaustive_cosines(query_match: np.ndarray, responder_match: np.ndarray) -> np.ndarray:
    """(batch, n) cosine of every query against every record, no clustering."""
    return np.asarray(query_match) @ np.asarray(responder_match).T
