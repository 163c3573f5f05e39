"""
Bench scenarios: run a sweep and write its report bundle.

Bundle layout under ``<out_dir>/bench/<scenario>/``:

    metrics.csv      one row per sweep point
    coverage.csv     coverage curve per model (label, column, names covered)
    transcript.json  transcript summaries and cost figures
    report.md        Markdown tables, cost table in the usual column layout
    run.json         resolved config, dataset spec, checks, timing and memory
"""
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import psutil

from .clustering import ClusterConfig
from .config import HefuzzConfig
from .datasets import SyntheticDatasetSpec, generate_dataset
from .errors import InvalidParams
from .sweeps import (
    DEFAULT_BATCH_SIZES,
    DEFAULT_CLUSTER_COUNTS,
    DEFAULT_LD_LEVELS,
    DEFAULT_TAUS,
    PlaintextRunner,
    ProtocolRunner,
    SweepResult,
    cost_table,
    sweep_batching,
    sweep_clusters,
    sweep_ld,
    sweep_threshold,
)

logger = logging.getLogger(__name__)

SCENARIOS = ("threshold", "clusters", "ld", "batching", "table")
RUNNERS = ("plaintext", "oracle", "ckks")

COST_COLUMNS = [
    ("data_size", "Data size"),
    ("clusters", "Clusters"),
    ("total_columns", "Total cols"),
    ("first_round_seconds", "First round (s)"),
    ("seconds_per_column", "Time/col (s)"),
    ("comm_per_column", "Comm/col (B)"),
]


@dataclass
class BenchScenario:
    """One bench invocation. Unset sizes fall back to per-scenario defaults."""
    name: str
    n_names: Optional[int] = None
    n_queries: Optional[int] = None
    runner: Optional[str] = None
    taus: Sequence[float] = DEFAULT_TAUS
    cluster_counts: Sequence[int] = DEFAULT_CLUSTER_COUNTS
    centroid_lengths: Sequence[int] = (200, 50)
    ld_levels: Sequence[int] = DEFAULT_LD_LEVELS
    batch_sizes: Sequence[int] = DEFAULT_BATCH_SIZES
    table_sizes: Sequence[int] = (1000, 2000)
    given_names: Optional[str] = None
    family_names: Optional[str] = None
    measure_baseline: bool = True

    DEFAULT_NAMES = {"threshold": 5000, "clusters": 10000, "ld": 2000, "batching": 1000, "table": 1000}
    DEFAULT_RUNNER = {"threshold": "plaintext", "clusters": "plaintext", "ld": "plaintext",
                      "batching": "ckks", "table": "ckks"}

    def __post_init__(self) -> None:
        if self.name not in SCENARIOS:
            raise InvalidParams(f"unknown scenario {self.name!r}, expected one of {', '.join(SCENARIOS)}")
        if self.runner is not None and self.runner not in RUNNERS:
            raise InvalidParams(f"unknown runner {self.runner!r}, expected one of {', '.join(RUNNERS)}")

    @property
    def names(self) -> int:
        return self.n_names or self.DEFAULT_NAMES[self.name]

    @property
    def queries(self) -> int:
        return self.n_queries or 200

    @property
    def runner_name(self) -> str:
        return self.runner or self.DEFAULT_RUNNER[self.name]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "n_names": self.names,
            "n_queries": self.queries,
            "runner": self.runner_name,
            "taus": list(self.taus),
            "cluster_counts": list(self.cluster_counts),
            "centroid_lengths": list(self.centroid_lengths),
            "ld_levels": list(self.ld_levels),
            "batch_sizes": list(self.batch_sizes),
            "table_sizes": list(self.table_sizes),
            "measure_baseline": self.measure_baseline,
        }


@dataclass
class BenchReport:
    scenario: BenchScenario
    result: SweepResult
    out_dir: Path
    seconds: float
    rss_bytes: int
    artifacts: Dict[str, Path] = field(default_factory=dict)

    @property
    def checks(self) -> Dict[str, bool]:
        return self.result.checks


def _make_runner(scenario: BenchScenario, config: HefuzzConfig):
    name = scenario.runner_name
    if name == "plaintext":
        return PlaintextRunner(config.encoding)
    return ProtocolRunner(name, params=config.he, encoding=config.encoding,
                          threads=config.protocol.threads, max_batch=config.protocol.max_batch,
                          seed=config.protocol.seed)


def _dataset_spec(scenario: BenchScenario, config: HefuzzConfig, perturbation: Any = "ncvr") -> SyntheticDatasetSpec:
    positives = scenario.queries // 2
    return SyntheticDatasetSpec(
        n_names=scenario.names,
        n_positives=positives,
        n_negatives=scenario.queries - positives,
        seed=config.seed,
        perturbation=perturbation,
        tau=config.protocol.tau,
        given_names=scenario.given_names or config.paths.given_names,
        family_names=scenario.family_names or config.paths.family_names,
        encoding=config.encoding,
    )


def run_scenario(scenario: BenchScenario, config: HefuzzConfig) -> SweepResult:
    runner = _make_runner(scenario, config)
    cluster_cfg = config.cluster
    tau = config.protocol.tau
    logger.info(f"[BENCH] scenario={scenario.name} names={scenario.names} queries={scenario.queries} "
                f"runner={scenario.runner_name}")

    if scenario.name == "threshold":
        dataset = generate_dataset(_dataset_spec(scenario, config))
        return sweep_threshold(dataset, scenario.taus, cluster_cfg, runner)
    if scenario.name == "clusters":
        dataset = generate_dataset(_dataset_spec(scenario, config))
        lengths = scenario.centroid_lengths if isinstance(runner, PlaintextRunner) else (200,)
        return sweep_clusters(dataset, scenario.cluster_counts, tau, lengths, cluster_cfg, runner, params=config.he)
    if scenario.name == "ld":
        return sweep_ld(_dataset_spec(scenario, config, perturbation=0), scenario.ld_levels, tau, cluster_cfg, runner)
    if not isinstance(runner, ProtocolRunner):
        raise InvalidParams(f"scenario {scenario.name!r} measures protocol cost and needs the oracle or ckks runner")
    if scenario.name == "batching":
        dataset = generate_dataset(_dataset_spec(scenario, config))
        return sweep_batching(dataset, scenario.batch_sizes, runner, ClusterConfig(seed=cluster_cfg.seed), tau,
                              measure_baseline=scenario.measure_baseline)
    return cost_table(scenario.table_sizes, _dataset_spec(scenario, config), runner, tau,
                      measure_baseline=scenario.measure_baseline)


# ============== artifacts ==============

def _write_csv(path: Path, rows: List[Dict[str, Any]]) -> None:
    columns: List[str] = []
    for row in rows:
        columns.extend(c for c in row if c not in columns)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _coverage_rows(result: SweepResult) -> List[Dict[str, Any]]:
    return [
        {"model": label, "column": j, "names_covered": int(count)}
        for label, curve in result.coverage.items()
        for j, count in enumerate(curve)
    ]


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def markdown_table(rows: Sequence[Dict[str, Any]], columns: Sequence[tuple]) -> str:
    header = "| " + " | ".join(title for _, title in columns) + " |"
    rule = "|" + "|".join("---" for _ in columns) + "|"
    body = ["| " + " | ".join(_fmt(row.get(key)) for key, _ in columns) + " |" for row in rows]
    return "\n".join([header, rule, *body])


def render_report(scenario: BenchScenario, result: SweepResult, rss_bytes: int, seconds: float) -> str:
    lines = [f"# hefuzz bench: {scenario.name}", ""]
    lines.append(f"Runner `{scenario.runner_name}`, {scenario.names} responder names, "
                 f"{scenario.queries} queries, {seconds:.1f} s, peak RSS {rss_bytes / 2**20:.1f} MiB.")
    lines.append("")
    if result.points:
        lines.append("## Accuracy")
        lines.append("")
        metric_cols = [("value", result.points[0].parameter), ("precision", "Precision"), ("recall", "Recall"),
                       ("f1", "F1"), ("accuracy", "Accuracy"), ("tp", "TP"), ("fp", "FP"), ("fn", "FN")]
        if scenario.name == "clusters":
            metric_cols.insert(1, ("label", "Model"))
            metric_cols.insert(2, ("columns", "Columns"))
        lines.append(markdown_table(result.rows(), metric_cols))
        lines.append("")
    if result.costs:
        lines.append("## Cost")
        lines.append("")
        cost_cols = list(COST_COLUMNS)
        if scenario.name == "batching":
            cost_cols[0] = ("batch", "Batch")
        elif scenario.name == "clusters":
            cost_cols = [("label", "Model"), ("k", "Clusters"), ("columns", "Total cols"),
                         ("comm_per_column", "Comm/col (B)"), ("response_bytes", "Response (B)"),
                         ("linear_response_bytes", "Linear (B)"), ("reduction_factor", "Reduction")]
        rows = [dict(row, memory_mib=rss_bytes / 2**20 if not row.get("extrapolated") else None)
                for row in result.costs]
        lines.append(markdown_table(rows, cost_cols + [("memory_mib", "Memory (MiB)")]))
        lines.append("")
        if any(row.get("extrapolated") for row in result.costs):
            lines.append("Rows without timings are extrapolated from the measured per-column bytes.")
            lines.append("")
    if result.checks:
        lines.append("## Checks")
        lines.append("")
        lines.extend(f"- {name}: {'pass' if ok else 'FAIL'}" for name, ok in result.checks.items())
        lines.append("")
    return "\n".join(lines)


def write_bundle(scenario: BenchScenario, result: SweepResult, config: HefuzzConfig, out_dir: Path,
                 seconds: float, rss_bytes: int, started: str) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "metrics": out_dir / "metrics.csv",
        "coverage": out_dir / "coverage.csv",
        "transcript": out_dir / "transcript.json",
        "report": out_dir / "report.md",
        "run": out_dir / "run.json",
    }
    _write_csv(artifacts["metrics"], result.rows())
    _write_csv(artifacts["coverage"], _coverage_rows(result))

    costs = [{k: v for k, v in row.items() if k != "shape"} for row in result.costs]
    transcript_doc = {
        "scenario": scenario.name,
        "sessions": [t.summary() for t in result.transcripts],
        "costs": costs,
        "config": config.to_dict(),
    }
    artifacts["transcript"].write_text(json.dumps(transcript_doc, indent=2, default=str), encoding="utf-8")
    artifacts["report"].write_text(render_report(scenario, result, rss_bytes, seconds), encoding="utf-8")

    run_doc = {
        "scenario": scenario.to_dict(),
        "config": config.to_dict(),
        "checks": result.checks,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "seconds": seconds,
        "rss_bytes": rss_bytes,
    }
    artifacts["run"].write_text(json.dumps(run_doc, indent=2, default=str), encoding="utf-8")
    return artifacts


def run_bench(scenario: BenchScenario, config: HefuzzConfig, out_dir: Optional[Path] = None) -> BenchReport:
    out_dir = Path(out_dir) if out_dir is not None else config.out_dir / "bench" / scenario.name
    started = datetime.now(timezone.utc).isoformat()
    start = time.perf_counter()
    result = run_scenario(scenario, config)
    seconds = time.perf_counter() - start
    rss = psutil.Process().memory_info().rss
    artifacts = write_bundle(scenario, result, config, out_dir, seconds, rss, started)
    failed = [name for name, ok in result.checks.items() if not ok]
    if failed:
        logger.warning(f"[BENCH] {scenario.name}: checks failed: {', '.join(failed)}")
    logger.info(f"[BENCH] {scenario.name} done in {seconds:.1f}s, report at {artifacts['report']}")
    return BenchReport(scenario=scenario, result=result, out_dir=out_dir, seconds=seconds,
                       rss_bytes=rss, artifacts=artifacts)
