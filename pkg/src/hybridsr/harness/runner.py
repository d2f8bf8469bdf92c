"""Multi-seed experiment runner, statistics and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml
from scipy import stats

from ..hybrid import SearchConfig, run_search
from ..reward import error_metrics
from .benchmarks import instantiate_benchmark, resolve_benchmarks
from .recovery import is_recovered

log = logging.getLogger(__name__)

WORKERS_ENV = "HYBRIDSR_WORKERS"
CSV_COLUMNS = ("benchmark", "n_runs", "recovery_pct", "min_nmse", "mean_runtime_s")


@dataclass
class RunRecord:
    benchmark: str
    seed: int
    label: str
    recovered: bool
    symbolic: bool | None
    best_expression: str
    best_reward: float
    candidates: int
    wall_seconds: float
    exact_fit: bool
    test_nmse: float
    test_rmse: float


@dataclass
class ExperimentReport:
    benchmark: str
    label: str
    runs: list = field(default_factory=list)

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def n_recovered(self) -> int:
        return sum(r.recovered for r in self.runs)

    @property
    def recovery_rate(self) -> float:
        return 100.0 * self.n_recovered / self.n_runs if self.runs else float("nan")

    @property
    def recovery_ci(self) -> tuple[float, float]:
        """95% Wilson interval on the recovery rate, in percent."""
        if not self.runs:
            return float("nan"), float("nan")
        ci = stats.binomtest(self.n_recovered, self.n_runs).proportion_ci(0.95, method="wilson")
        return 100.0 * ci.low, 100.0 * ci.high

    def _nmse(self) -> np.ndarray:
        return np.array([r.test_nmse for r in self.runs], dtype=float)

    @property
    def min_nmse(self) -> float:
        return float(np.min(self._nmse())) if self.runs else float("nan")

    @property
    def mean_nmse(self) -> float:
        return float(np.mean(self._nmse())) if self.runs else float("nan")

    @property
    def mean_rmse(self) -> float:
        return float(np.mean([r.test_rmse for r in self.runs])) if self.runs else float("nan")

    @property
    def median_rmse(self) -> float:
        return float(np.median([r.test_rmse for r in self.runs])) if self.runs else float("nan")

    @property
    def mean_runtime(self) -> float:
        return float(np.mean([r.wall_seconds for r in self.runs])) if self.runs else float("nan")


def aggregate_ci(reports: Sequence[ExperimentReport]) -> tuple[float, float]:
    """Mean recovery over benchmarks and 1.96 standard errors of that mean."""
    rates = np.array([r.recovery_rate for r in reports], dtype=float)
    if rates.size == 0:
        return float("nan"), float("nan")
    if rates.size == 1:
        return float(rates[0]), float("nan")
    return float(rates.mean()), float(1.96 * rates.std(ddof=1) / math.sqrt(rates.size))


def default_label(cfg: SearchConfig) -> str:
    parts = [cfg.trainer]
    if cfg.gp_generations != SearchConfig.gp_generations:
        parts.append(f"S{cfg.gp_generations}")
    parts += sorted(cfg.ablations)
    return "+".join(parts)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def _seed_list(seeds: int | Iterable[int]) -> list[int]:
    if isinstance(seeds, int):
        if seeds < 1:
            raise ValueError("need at least one seed")
        return list(range(seeds))
    out = [int(s) for s in seeds]
    if not out:
        raise ValueError("need at least one seed")
    return out


def run_one(benchmark: str, cfg_dict: dict, seed: int, label: str, data_seed: int = 0,
            log_path: str | None = None, symbolic: bool = True) -> RunRecord:
    """One search on one benchmark; optionally streams iteration records to ``log_path``."""
    cfg = SearchConfig.from_dict(cfg_dict)
    bench = instantiate_benchmark(benchmark, data_seed)
    sink = open(log_path, "w") if log_path else None
    try:
        def on_iteration(rec: dict) -> None:
            if sink is not None:
                sink.write(json.dumps({"type": "iteration", **rec}) + "\n")

        result = run_search(cfg, bench.dataset, bench.library, seed=seed, on_iteration=on_iteration)
        consts = result.best_fitness.consts if result.best_fitness else ()
        verdict = is_recovered(result.best, bench.truth, bench.dataset.domain, bench.library,
                               bench.truth_library, consts, symbolic=symbolic)
        metrics = error_metrics(result.best, bench.library, bench.dataset, "test", consts)
        record = RunRecord(
            benchmark=benchmark,
            seed=seed,
            label=label,
            recovered=verdict.recovered,
            symbolic=verdict.symbolic,
            best_expression=result.best_infix,
            best_reward=result.best_reward,
            candidates=result.candidates,
            wall_seconds=result.wall_time,
            exact_fit=result.exact_fit,
            test_nmse=metrics["nmse"],
            test_rmse=metrics["rmse"],
        )
        if sink is not None:
            sink.write(json.dumps({"type": "result", **asdict(record), "config": cfg.to_dict()}) + "\n")
    finally:
        if sink is not None:
            sink.close()
    log.info("%s seed %d: recovered=%s reward=%.6f %s (%.1fs)", benchmark, seed, record.recovered,
             record.best_reward, record.best_expression, record.wall_seconds)
    return record


def run_experiment(
    benchmarks: str | Sequence[str],
    cfg: SearchConfig,
    seeds: int | Iterable[int],
    out_dir: str | Path | None = None,
    workers: int | None = None,
    label: str | None = None,
    data_seed: int = 0,
    symbolic: bool = True,
) -> list[ExperimentReport]:
    """Run every (benchmark, seed) pair and summarise per benchmark."""
    names = resolve_benchmarks(benchmarks)
    seed_list = _seed_list(seeds)
    label = label or default_label(cfg)
    cfg_dict = cfg.to_dict()
    out = Path(out_dir) if out_dir is not None else None
    jobs = []
    for name in names:
        for seed in seed_list:
            path = None
            if out is not None:
                run_dir = out / "runs" / _slug(name)
                run_dir.mkdir(parents=True, exist_ok=True)
                path = str(run_dir / f"seed{seed}.jsonl")
            jobs.append((name, cfg_dict, seed, label, data_seed, path, symbolic))

    n_workers = min(resolve_workers(workers), len(jobs))
    if n_workers == 1:
        records = [run_one(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(run_one, *job) for job in jobs]
            records = [f.result() for f in futures]

    reports = {name: ExperimentReport(name, label) for name in names}
    for rec in records:
        reports[rec.benchmark].runs.append(rec)
    result = list(reports.values())
    if out is not None:
        write_outputs(result, out, cfg)
    return result


def _slug(name: str) -> str:
    return name.replace("*", "_star")


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6g}"


def write_aggregate_csv(reports: Sequence[ExperimentReport], path: Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow([r.benchmark, r.n_runs, _fmt(r.recovery_rate), _fmt(r.min_nmse), _fmt(r.mean_runtime)])


def summary_table(reports: Sequence[ExperimentReport]) -> str:
    header = f"{'benchmark':<14}{'runs':>6}{'recovery%':>11}{'95% CI':>17}{'min NMSE':>12}{'mean RMSE':>12}{'median RMSE':>13}{'runtime s':>11}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lo, hi = r.recovery_ci
        lines.append(
            f"{r.benchmark:<14}{r.n_runs:>6}{r.recovery_rate:>11.1f}{f'[{lo:.1f}, {hi:.1f}]':>17}"
            f"{r.min_nmse:>12.3g}{r.mean_rmse:>12.3g}{r.median_rmse:>13.3g}{r.mean_runtime:>11.2f}"
        )
    mean, half = aggregate_ci(reports)
    lines.append("-" * len(header))
    lines.append(f"mean recovery {mean:.2f}% +/- {_fmt(half)} (1.96 SE over {len(reports)} benchmarks)")
    return "\n".join(lines)


def write_outputs(reports: Sequence[ExperimentReport], out: Path, cfg: SearchConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_aggregate_csv(reports, out / "aggregate.csv")
    (out / "summary.txt").write_text(summary_table(reports) + "\n")
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def load_records(root: str | Path) -> list[RunRecord]:
    """Final result records from every run file under ``root``."""
    names = {f.name for f in RunRecord.__dataclass_fields__.values()}
    records = []
    for path in sorted(Path(root).rglob("*.jsonl")):
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                if rec.get("type") == "result":
                    records.append(RunRecord(**{k: v for k, v in rec.items() if k in names}))
    return records
