"""
Accuracy metrics for matching runs.

``evaluate`` scores one boolean verdict per query against its label; its
counts always sum to the number of queries.

``evaluate_links`` is a separate, stricter metric over the flagged (query,
record) pairs: a query that matched the wrong record counts as a false
positive rather than a success, and a query flagging several records adds
several counts, so its total can exceed the number of queries. Sweeps report
both side by side.
"""
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Sequence

import numpy as np

from .errors import LengthMismatch


@dataclass(frozen=True)
class MetricsReport:
    """Confusion counts and derived rates. Undefined ratios are reported as 0."""
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        flagged = self.tp + self.fp
        return self.tp / flagged if flagged else 0.0

    @property
    def recall(self) -> float:
        relevant = self.tp + self.fn
        return self.tp / relevant if relevant else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def _as_bools(values: Iterable[Any]) -> np.ndarray:
    return np.array([bool(getattr(v, "matched", v)) for v in values], dtype=bool)


def evaluate(verdicts: Sequence[Any], truth: Sequence[bool]) -> MetricsReport:
    """Query-level metrics. ``verdicts`` are booleans or MatchVerdicts."""
    if len(verdicts) != len(truth):
        raise LengthMismatch(f"{len(verdicts)} verdicts for {len(truth)} labels")
    predicted = _as_bools(verdicts)
    actual = np.asarray(truth, dtype=bool)
    return MetricsReport(
        tp=int(np.sum(predicted & actual)),
        fp=int(np.sum(predicted & ~actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def evaluate_links(flagged: Sequence[Iterable[int]], sources: Sequence[int]) -> MetricsReport:
    """
    Link-level metrics.

    Not a per-query confusion matrix: ``total`` is at least ``len(sources)``
    and grows by one for every extra flagged record.

    ``flagged[q]`` holds the responder records query q was matched to and
    ``sources[q]`` its true record (-1 for a negative query). A flagged source
    is a true positive, every other flagged record a false positive, an
    unflagged source a false negative, a negative with no flags a true negative.
    """
    if len(flagged) != len(sources):
        raise LengthMismatch(f"{len(flagged)} flag sets for {len(sources)} queries")
    tp = fp = tn = fn = 0
    for records, source in zip(flagged, sources):
        records = set(int(r) for r in records)
        source = int(source)
        if source >= 0:
            hit = source in records
            tp += hit
            fn += not hit
            fp += len(records) - hit
        else:
            fp += len(records)
            tn += not records
    return MetricsReport(tp=tp, fp=fp, tn=tn, fn=fn)


def recall_non_increasing(reports: Sequence[MetricsReport], tolerance: float = 0.0) -> bool:
    recalls = [r.recall for r in reports]
    return all(b <= a + tolerance for a, b in zip(recalls, recalls[1:]))
