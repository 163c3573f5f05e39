"""
Sweep drivers for the evaluation harness.

Each sweep fixes a dataset, varies one parameter and scores every point with
link-level metrics. Points are run through a ``Runner``: the plaintext
reference matcher for accuracy at scale, or the protocol itself (oracle or
CKKS backend) when verdicts or costs must come from the real message flow.
"""
import copy
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .ckks import HeParams, KeySet, keygen
from .clustering import ClusterConfig, ClusterModel, build_model, coverage, linear_model
from .datasets import SyntheticDataset, SyntheticDatasetSpec, generate_dataset
from .encoding import EncodingParams
from .errors import InvalidParams
from .matcher import PlaintextMatcher, flagged_records
from .metrics import MetricsReport, evaluate, evaluate_links, recall_non_increasing
from .protocol import COLUMN_DEPTH, MatchVerdict, ProtocolConfig, Querier, Responder, run_protocol
from .serialize import ciphertext_size
from .transcript import CostSummary, TranscriptLog, report
from .wire import Frame, MessageType, pack_column_score

logger = logging.getLogger(__name__)

DEFAULT_TAUS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_CLUSTER_COUNTS = (0, 10, 50, 100)
DEFAULT_LD_LEVELS = (0, 1, 2, 3, 4, 5)
DEFAULT_BATCH_SIZES = (1, 10, 100, 1000)
EXTRAPOLATED_SIZES = (100_000, 1_000_000)

# allowed precision loss of a clustered run against linear mode
PRECISION_TOLERANCE = 0.02


# ============== runners ==============

@dataclass
class RunResult:
    verdicts: List[MatchVerdict]
    seconds: float
    transcripts: List[TranscriptLog] = field(default_factory=list)


class PlaintextRunner:
    """Exact cosine arithmetic over the same model and threshold."""
    name = "plaintext"

    def __init__(self, encoding: Optional[EncodingParams] = None, early_exit: bool = False):
        self.encoding = encoding or EncodingParams()
        self.early_exit = early_exit

    def run(self, model: ClusterModel, names: Sequence[str], tau: float) -> RunResult:
        start = time.perf_counter()
        verdicts = PlaintextMatcher(model, self.encoding, tau).match(names, early_exit=self.early_exit)
        return RunResult(verdicts=verdicts, seconds=time.perf_counter() - start)


class ProtocolRunner:
    """
    In-process protocol sessions, one per batch of at most ``max_batch`` names.

    The responder side gets the oracle backend only through this runner;
    a served responder never accepts it.
    """

    def __init__(self, backend: str = "oracle", params: Optional[HeParams] = None,
                 encoding: Optional[EncodingParams] = None, early_exit: bool = False,
                 threads: int = 1, max_batch: Optional[int] = None, seed: Optional[int] = None,
                 keys: Optional[KeySet] = None):
        if backend not in ("oracle", "ckks"):
            raise InvalidParams(f"unknown backend {backend!r}")
        self.backend = backend
        self.name = backend
        self.params = params or HeParams.for_protocol()
        self.encoding = encoding or EncodingParams()
        self.early_exit = early_exit
        self.threads = threads
        self.max_batch = max_batch
        self.seed = seed
        self._keys = keys

    def _config(self, tau: float) -> ProtocolConfig:
        return ProtocolConfig(tau=tau, early_exit=self.early_exit, threads=self.threads,
                              max_batch=self.max_batch, seed=self.seed)

    def _querier(self, config: ProtocolConfig) -> Querier:
        if self.backend == "oracle":
            return Querier.oracle(self.params, self.encoding, config)
        if self._keys is None:
            self._keys = keygen(self.params, seed=self.seed)
        return Querier.with_keys(self._keys, self.encoding, config, seed=self.seed)

    def run(self, model: ClusterModel, names: Sequence[str], tau: float) -> RunResult:
        config = self._config(tau)
        querier = self._querier(config)
        start = time.perf_counter()
        verdicts: List[MatchVerdict] = []
        transcripts: List[TranscriptLog] = []
        step = querier.max_batch
        for offset in range(0, len(names), step):
            batch = list(names[offset:offset + step])
            querier.reset()
            responder = Responder(model, self.encoding, config, allow_oracle=True)
            run = run_protocol(querier, responder, batch, query_ids=range(offset, offset + len(batch)))
            verdicts.extend(run.verdicts)
            transcripts.append(run.transcript)
        return RunResult(verdicts=verdicts, seconds=time.perf_counter() - start, transcripts=transcripts)


# ============== results ==============

@dataclass
class SweepPoint:
    """``metrics`` is link-level; ``query_metrics`` is the per-query confusion matrix."""
    scenario: str
    parameter: str
    value: Any
    metrics: MetricsReport
    details: Dict[str, Any] = field(default_factory=dict)
    query_metrics: Optional[MetricsReport] = None

    def to_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {"scenario": self.scenario, "parameter": self.parameter, "value": self.value}
        row.update(self.metrics.to_dict())
        if self.query_metrics is not None:
            row.update({f"query_{k}": v for k, v in self.query_metrics.to_dict().items()})
        row.update({k: v for k, v in self.details.items() if not isinstance(v, (list, dict))})
        return row


@dataclass
class SweepResult:
    scenario: str
    points: List[SweepPoint]
    checks: Dict[str, bool] = field(default_factory=dict)
    coverage: Dict[str, List[int]] = field(default_factory=dict)
    costs: List[Dict[str, Any]] = field(default_factory=list)
    transcripts: List[TranscriptLog] = field(default_factory=list, repr=False)

    def rows(self) -> List[Dict[str, Any]]:
        return [p.to_row() for p in self.points]

    def point(self, value: Any) -> SweepPoint:
        for p in self.points:
            if p.value == value:
                return p
        raise KeyError(value)


def link_metrics(model: ClusterModel, dataset: SyntheticDataset, verdicts: Sequence[MatchVerdict]) -> MetricsReport:
    flagged = [flagged_records(model, v) for v in verdicts]
    return evaluate_links(flagged, dataset.sources)


def query_metrics(dataset: SyntheticDataset, verdicts: Sequence[MatchVerdict]) -> MetricsReport:
    return evaluate(verdicts, dataset.labels)


def measured_baseline(runner: Any, dataset: SyntheticDataset, tau: float,
                      names: Optional[Sequence[str]] = None) -> Optional[TranscriptLog]:
    """
    Transcript of one linear-mode session through ``runner`` (None for the
    plaintext runner), the measured denominator of the reduction factor.
    """
    if not isinstance(runner, ProtocolRunner):
        return None
    full = copy.copy(runner)
    full.early_exit = False
    model = linear_model(dataset.encoded(), dataset.spec.encoding.fingerprint)
    batch = list(names if names is not None else dataset.query_names[:1])
    logger.info(f"[BENCH] measuring a linear baseline over {model.num_records} columns")
    return full.run(model, batch, tau).transcripts[0]


def _model_for(dataset: SyntheticDataset, k: Optional[int], cfg: ClusterConfig,
               centroid_length: Optional[int] = None) -> ClusterModel:
    encoded = dataset.encoded()
    fingerprint = dataset.spec.encoding.fingerprint
    if k == 0:
        return linear_model(encoded, fingerprint)
    return build_model(encoded, ClusterConfig(k=k, iterations=cfg.iterations, seed=cfg.seed),
                       fingerprint=fingerprint, centroid_length=centroid_length)


# ============== sweeps ==============

def sweep_threshold(dataset: SyntheticDataset, taus: Sequence[float] = DEFAULT_TAUS,
                    cluster_cfg: Optional[ClusterConfig] = None, runner=None) -> SweepResult:
    """Metrics per tau on one model; recall must not increase with tau."""
    cfg = cluster_cfg or ClusterConfig()
    runner = runner or PlaintextRunner(dataset.spec.encoding)
    model = _model_for(dataset, cfg.k, cfg)
    points = []
    for tau in taus:
        result = runner.run(model, dataset.query_names, tau)
        metrics = link_metrics(model, dataset, result.verdicts)
        logger.info(f"[BENCH] tau={tau:.2f} precision={metrics.precision:.3f} recall={metrics.recall:.3f}")
        points.append(SweepPoint("threshold", "tau", float(tau), metrics,
                                 {"k": model.k, "seconds": result.seconds, "runner": runner.name},
                                 query_metrics=query_metrics(dataset, result.verdicts)))
    checks = {"recall_non_increasing": recall_non_increasing([p.metrics for p in points])}
    return SweepResult("threshold", points, checks=checks, coverage={str(model.k): coverage(model).cumulative.tolist()})


def column_cost(params: HeParams, model: ClusterModel) -> Dict[str, Any]:
    """Analytic response cost of one session: M score frames against n for linear mode."""
    ct_bytes = ciphertext_size(params, max(params.top_level - COLUMN_DEPTH, 0))
    per_column = Frame(MessageType.COLUMN_SCORE, pack_column_score(0, bytes(ct_bytes))).size
    response = per_column * model.max_cluster_size
    linear = per_column * model.num_records
    return {
        "columns": model.max_cluster_size,
        "comm_per_column": per_column,
        "response_bytes": response,
        "linear_response_bytes": linear,
        "reduction_factor": linear / response if response else float("inf"),
    }


def sweep_clusters(dataset: SyntheticDataset, counts: Sequence[int] = DEFAULT_CLUSTER_COUNTS,
                   tau: float = 0.9, centroid_lengths: Sequence[int] = (200,),
                   cluster_cfg: Optional[ClusterConfig] = None, runner=None,
                   params: Optional[HeParams] = None) -> SweepResult:
    """
    Accuracy, coverage and response cost per cluster count; k=0 is linear mode.

    ``centroid_lengths`` below 200 cluster on a prefix of the centroid
    signature and only make sense with the plaintext runner.
    """
    cfg = cluster_cfg or ClusterConfig()
    runner = runner or PlaintextRunner(dataset.spec.encoding)
    params = params or HeParams.for_protocol()
    points: List[SweepPoint] = []
    curves: Dict[str, List[int]] = {}
    costs: List[Dict[str, Any]] = []
    transcripts: List[TranscriptLog] = []
    baseline: Optional[TranscriptLog] = None
    if isinstance(runner, ProtocolRunner) and (0 not in counts or runner.early_exit):
        baseline = measured_baseline(runner, dataset, tau)

    for length in centroid_lengths:
        if length < 200 and not isinstance(runner, PlaintextRunner):
            raise InvalidParams("shortened centroid encodings run with the plaintext runner only")
        for k in counts:
            if k == 0 and length != centroid_lengths[0]:
                continue  # linear mode does not depend on the centroid encoding
            model = _model_for(dataset, k, cfg, centroid_length=length)
            result = runner.run(model, dataset.query_names, tau)
            metrics = link_metrics(model, dataset, result.verdicts)
            if k == 0 and result.transcripts and baseline is None:
                baseline = result.transcripts[0]
            cost = _measured_cost(params, model, result, baseline)
            label = "linear" if k == 0 else f"k{k}_el{length}"
            curves[label] = coverage(model).cumulative.tolist()
            costs.append({"label": label, "k": k, "centroid_length": length, **cost})
            transcripts.extend(result.transcripts)
            logger.info(f"[BENCH] {label}: M={model.max_cluster_size} precision={metrics.precision:.3f} "
                        f"recall={metrics.recall:.3f} reduction={cost['reduction_factor']:.1f}x")
            points.append(SweepPoint("clusters", "k", k, metrics, {
                "label": label, "centroid_length": length, "model_k": model.k,
                "columns": model.max_cluster_size, "seconds": result.seconds, "runner": runner.name,
            }, query_metrics=query_metrics(dataset, result.verdicts)))

    checks = _precision_checks(points)
    return SweepResult("clusters", points, checks=checks, coverage=curves, costs=costs, transcripts=transcripts)


def _measured_cost(params: HeParams, model: ClusterModel, result: RunResult,
                   baseline: Optional[TranscriptLog]) -> Dict[str, Any]:
    """Analytic column cost, replaced by transcript bytes when the run went through the protocol."""
    cost = column_cost(params, model)
    cost["analytic_reduction_factor"] = cost["reduction_factor"]
    cost["baseline"] = "analytic"
    if result.transcripts and baseline is not None:
        measured = report(result.transcripts[0], baseline=baseline)
        cost.update({
            "comm_per_column": measured.column_score_bytes,
            "response_bytes": measured.response_bytes,
            "linear_response_bytes": measured.linear_response_bytes,
            "reduction_factor": measured.reduction_factor,
            "baseline": "measured",
        })
    return cost


def _precision_checks(points: Sequence[SweepPoint]) -> Dict[str, bool]:
    linear = next((p for p in points if p.value == 0), None)
    if linear is None:
        return {}
    full = [p for p in points if p.value != 0 and p.details["centroid_length"] >= 200]
    return {
        "precision_preserved": all(p.metrics.precision >= linear.metrics.precision - PRECISION_TOLERANCE
                                   for p in full),
        "recall_not_above_linear": all(p.metrics.recall <= linear.metrics.recall + 1e-12 for p in full),
    }


def sweep_ld(spec: SyntheticDatasetSpec, levels: Sequence[int] = DEFAULT_LD_LEVELS, tau: float = 0.9,
             cluster_cfg: Optional[ClusterConfig] = None, runner=None) -> SweepResult:
    """One census-style dataset per edit distance, same seed and responder set."""
    cfg = cluster_cfg or ClusterConfig()
    runner = runner or PlaintextRunner(spec.encoding)
    points = []
    for level in levels:
        dataset = generate_dataset(_with(spec, perturbation=int(level), tau=tau))
        model = _model_for(dataset, cfg.k, cfg)
        result = runner.run(model, dataset.query_names, tau)
        metrics = link_metrics(model, dataset, result.verdicts)
        logger.info(f"[BENCH] LD{level}: precision={metrics.precision:.3f} recall={metrics.recall:.3f}")
        points.append(SweepPoint("ld", "distance", int(level), metrics,
                                 {"k": model.k, "seconds": result.seconds, "runner": runner.name},
                                 query_metrics=query_metrics(dataset, result.verdicts)))
    checks = {"recall_non_increasing": recall_non_increasing([p.metrics for p in points], tolerance=0.05)}
    return SweepResult("ld", points, checks=checks)


def _with(spec: SyntheticDatasetSpec, **changes: Any) -> SyntheticDatasetSpec:
    return replace(spec, **changes)


# ============== cost scenarios ==============

def sweep_batching(dataset: SyntheticDataset, batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES,
                   runner: Optional[ProtocolRunner] = None, cluster_cfg: Optional[ClusterConfig] = None,
                   tau: float = 0.9, measure_baseline: bool = True) -> SweepResult:
    """
    One session per batch size; message counts and sizes must not depend on the batch.

    With ``measure_baseline`` the reduction factor divides by the column bytes
    of a real linear-mode session, measured once since it does not depend on
    the batch; otherwise it is estimated as n score frames.
    """
    cfg = cluster_cfg or ClusterConfig()
    runner = runner or ProtocolRunner("ckks", encoding=dataset.spec.encoding)
    model = _model_for(dataset, cfg.k, cfg)
    names = dataset.query_names
    points: List[SweepPoint] = []
    costs: List[Dict[str, Any]] = []
    transcripts: List[TranscriptLog] = []
    baseline = measured_baseline(runner, dataset, tau) if measure_baseline else None

    for size in batch_sizes:
        if size > runner.params.slot_count:
            logger.warning(f"[BENCH] batch {size} exceeds {runner.params.slot_count} slots, skipped")
            continue
        batch = [names[i % len(names)] for i in range(size)]
        result = runner.run(model, batch, tau)
        transcript = result.transcripts[0]
        cost = report(transcript, scenario=f"batch{size}", baseline=baseline, num_records=model.num_records)
        truth = dataset.sources[[i % len(names) for i in range(size)]]
        metrics = evaluate_links([flagged_records(model, v) for v in result.verdicts], truth)
        costs.append({"batch": size, **_cost_row(cost), "baseline": "measured" if baseline is not None else "analytic",
                      "shape": transcript.shape()})
        transcripts.append(transcript)
        points.append(SweepPoint("batching", "batch", size, metrics, {
            "first_round_seconds": cost.first_round_seconds,
            "seconds_per_column": cost.seconds_per_column,
            "comm_per_column": cost.column_score_bytes,
            "columns": cost.columns,
        }, query_metrics=evaluate(result.verdicts, truth >= 0)))
        logger.info(f"[BENCH] batch={size}: first round {cost.first_round_seconds:.2f}s, "
                    f"{cost.seconds_per_column:.3f}s/column, {cost.column_score_bytes} B/column")

    shapes = {tuple((t, b) for t, b in c["shape"]) for c in costs}
    checks = {"constant_message_shape": len(shapes) <= 1}
    return SweepResult("batching", points, checks=checks, costs=costs, transcripts=transcripts)


def _cost_row(cost: CostSummary) -> Dict[str, Any]:
    return {
        "columns": cost.columns,
        "first_round_seconds": cost.first_round_seconds,
        "seconds_per_column": cost.seconds_per_column,
        "comm_per_column": cost.column_score_bytes,
        "response_bytes": cost.response_bytes,
        "linear_response_bytes": cost.linear_response_bytes,
        "reduction_factor": cost.reduction_factor,
        "constant_column_frames": cost.constant_column_frames,
    }


def cost_table(sizes: Sequence[int], spec: SyntheticDatasetSpec, runner: Optional[ProtocolRunner] = None,
               tau: float = 0.9, queries: int = 1,
               extrapolate: Sequence[int] = EXTRAPOLATED_SIZES, measure_baseline: bool = True) -> SweepResult:
    """
    Measured cost rows for desk-scale sizes plus extrapolated rows.

    Desk-scale reduction factors divide by a measured linear-mode session when
    ``measure_baseline`` is set.

    Extrapolated rows scale M with the measured M / sqrt(n) ratio and reuse
    the measured per-column bytes; their times are left empty.
    """
    runner = runner or ProtocolRunner("ckks", encoding=spec.encoding)
    rows: List[Dict[str, Any]] = []
    points: List[SweepPoint] = []
    transcripts: List[TranscriptLog] = []
    ratios: List[float] = []
    per_column = 0

    for n in sizes:
        dataset = generate_dataset(_with(spec, n_names=int(n), n_positives=queries, n_negatives=0, tau=tau))
        model = _model_for(dataset, None, ClusterConfig(seed=spec.seed))
        result = runner.run(model, dataset.query_names, tau)
        baseline = measured_baseline(runner, dataset, tau) if measure_baseline else None
        cost = report(result.transcripts[0], scenario=f"n{n}", baseline=baseline, num_records=model.num_records)
        per_column = cost.column_score_bytes
        ratios.append(model.max_cluster_size / math.sqrt(n))
        transcripts.extend(result.transcripts)
        row = {"data_size": int(n), "clusters": model.k, "total_columns": model.max_cluster_size,
               "extrapolated": False, "baseline": "measured" if baseline is not None else "analytic", **_cost_row(cost)}
        rows.append(row)
        metrics = link_metrics(model, dataset, result.verdicts)
        points.append(SweepPoint("table", "n", int(n), metrics, {k: v for k, v in row.items() if k != "data_size"},
                                 query_metrics=query_metrics(dataset, result.verdicts)))
        logger.info(f"[BENCH] n={n}: k={model.k} M={model.max_cluster_size} "
                    f"first round {cost.first_round_seconds:.2f}s, {per_column} B/column")

    ratio = float(np.mean(ratios)) if ratios else 1.0
    for n in extrapolate:
        columns = int(math.ceil(ratio * math.sqrt(n)))
        response = columns * per_column
        linear = n * per_column
        rows.append({
            "data_size": int(n), "clusters": int(round(math.sqrt(n))), "total_columns": columns,
            "extrapolated": True, "baseline": "analytic", "columns": columns,
            "first_round_seconds": None, "seconds_per_column": None,
            "comm_per_column": per_column, "response_bytes": response, "linear_response_bytes": linear,
            "reduction_factor": linear / response if response else None, "constant_column_frames": True,
        })
    return SweepResult("table", points, costs=rows, transcripts=transcripts)
