"""Batch study runner: repeated seeded trials, aggregation, plot-ready CSVs.

A study runs every (strategy, trial) pair of a benchmark through the
sequential loop, writes one trace CSV per trial, and aggregates squared
errors against the benchmark's analytic truth into mean/std curves. All
outputs are byte-deterministic for a fixed config: trial seeds are derived
from the base seed, wall times are zeroed in files by default, and files
are written in sorted order after all trials complete, so the result is
independent of parallel execution order.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set

import numpy as np

from .acquisition import Strategy, STRATEGY_NAMES
from .benchmarks import get_benchmark, ratio_error_surface
from .driver import (ConvergenceCriterion, ConvergenceTrace, LoopConfig,
                     export_trace_csv, run)
from .errors import AlignmentError, InvalidParameterError

logger = logging.getLogger(__name__)

AGGREGATE_CSV_VERSION = "gsax-aggregate-v1"
PLOTDATA_CSV_VERSION = "gsax-plotdata-v1"
RATIO_SURFACE_CSV_VERSION = "gsax-ratio-surface-v1"

#: Stride between strategy seed blocks in unpaired mode (must exceed n_trials).
SEED_STRIDE = 100003


@dataclass
class StudyConfig:
    benchmark: str
    strategies: Sequence[str]
    n_trials: int = 10
    n_initial: int = 10
    budget: int = 100
    n_candidates: int = 25000
    n_grid: int = 128
    estimator: str = "mean_predictor"
    n_realizations: int = 100
    seed: int = 0
    out: str = "results"
    emit: Set[str] = field(default_factory=lambda: {"trace", "aggregate"})
    jobs: int = 1
    paired: bool = False
    weight_mode: str = "uniform"
    epsilon: Optional[float] = None
    patience: int = 5
    candidate_mode: str = "uniform"
    timing: str = "zero"

    def __post_init__(self):
        if self.n_trials < 1:
            raise InvalidParameterError("n_trials must be at least 1")
        if not self.strategies:
            raise InvalidParameterError("at least one strategy is required")
        for name in self.strategies:
            if name not in STRATEGY_NAMES:
                raise InvalidParameterError(f"unknown strategy {name!r}")
        unknown = set(self.emit) - {"trace", "aggregate", "ratio_surface"}
        if unknown:
            raise InvalidParameterError(f"unknown emit options: {sorted(unknown)}")
        _loop_config(self, self.strategies[0], self.seed)  # validate loop fields eagerly


@dataclass
class AggregateRecord:
    """Across-trial squared-error summary at one sample count."""

    strategy: str
    n_samples: int
    mse: Dict[str, float]
    std: Optional[Dict[str, float]]


@dataclass
class StudyResult:
    config: StudyConfig
    traces: Dict[str, List[ConvergenceTrace]]
    aggregate: List[AggregateRecord]
    failures: List[str]
    files: List[str]


def trial_seed(base_seed: int, strategy_index: int, trial: int, paired: bool) -> int:
    """Deterministic per-trial seed; strategies share seeds only when paired."""
    if paired:
        return base_seed + trial
    return base_seed + trial + SEED_STRIDE * strategy_index


def _loop_config(config: StudyConfig, strategy_name: str, seed: int) -> LoopConfig:
    convergence = None
    if config.epsilon is not None:
        convergence = ConvergenceCriterion(epsilon=config.epsilon, patience=config.patience)
    return LoopConfig(
        n_initial=config.n_initial,
        budget=config.budget,
        n_candidates=config.n_candidates,
        n_grid=config.n_grid,
        strategy=Strategy.from_name(strategy_name, config.weight_mode),
        seed=seed,
        estimator=config.estimator,
        n_realizations=config.n_realizations,
        convergence=convergence,
        candidate_mode=config.candidate_mode,
    )


def _run_trial(args) -> tuple:
    """Worker: one (strategy, trial) run; returns the trace as JSON text."""
    benchmark_name, strategy_name, trial, seed, cfg = args
    bench = get_benchmark(benchmark_name)
    trace = run(bench.evaluate, bench.bounds, _loop_config(cfg, strategy_name, seed))
    return strategy_name, trial, trace.to_json(timing="measured")


def run_study(config: StudyConfig) -> StudyResult:
    """Run all (strategy, trial) pairs and write the configured outputs."""
    bench = get_benchmark(config.benchmark)
    tasks = [
        (config.benchmark, strat, trial,
         trial_seed(config.seed, si, trial, config.paired), config)
        for si, strat in enumerate(config.strategies)
        for trial in range(config.n_trials)
    ]

    results: Dict[tuple, ConvergenceTrace] = {}
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            for strat, trial, payload in pool.map(_run_trial, tasks):
                results[(strat, trial)] = ConvergenceTrace.from_json(payload)
    else:
        for task in tasks:
            strat, trial, payload = _run_trial(task)
            results[(strat, trial)] = ConvergenceTrace.from_json(payload)

    traces = {strat: [results[(strat, t)] for t in range(config.n_trials)]
              for strat in config.strategies}
    failures = [f"{strat}/trial{t}" for strat in config.strategies
                for t in range(config.n_trials)
                if traces[strat][t].status == "error"]

    agg = aggregate(traces, bench.analytic_sobol, bench.analytic_main_vars,
                    bench.analytic_total_var)

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    files: List[str] = []
    if "trace" in config.emit:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for strat in config.strategies:
            for t, trace in enumerate(traces[strat]):
                path = tdir / f"trace_{strat}_{t:03d}.csv"
                export_trace_csv(trace, path, trial=t, truth=bench.analytic_sobol,
                                 timing=config.timing)
                files.append(str(path))
    if "aggregate" in config.emit:
        path = out / "aggregate.csv"
        write_aggregate_csv(agg, path, bench.dim)
        files.append(str(path))
        path = out / "plotdata.csv"
        emit_plot_data(agg, path)
        files.append(str(path))
    if "ratio_surface" in config.emit:
        for case in (1, 2, 3, 4):
            path = out / f"ratio_surface_case{case}.csv"
            write_ratio_surface(float(bench.analytic_sobol.max()), case, path,
                                y=bench.analytic_total_var)
            files.append(str(path))

    report = study_report(traces, bench.analytic_sobol, bench.analytic_total_var)
    report["failures"] = failures
    path = out / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True))
    files.append(str(path))

    return StudyResult(config=config, traces=traces, aggregate=agg,
                       failures=failures, files=files)


def aggregate(traces: Dict[str, List[ConvergenceTrace]], sobol_truth: np.ndarray,
              main_var_truth: np.ndarray, total_var_truth: float) -> List[AggregateRecord]:
    """Mean and std of per-trial squared errors at each sample count."""
    d = sobol_truth.size
    metrics = (["total_var"] + [f"mev_{i + 1}" for i in range(d)]
               + [f"s_{i + 1}" for i in range(d)])
    records: List[AggregateRecord] = []
    for strat in traces:
        ok = [tr for tr in traces[strat] if tr.status != "error"]
        if not ok:
            continue
        grids = [tr.n_samples() for tr in ok]
        if any(g.shape != grids[0].shape or np.any(g != grids[0]) for g in grids[1:]):
            raise AlignmentError(f"traces for strategy {strat!r} have mismatched sample grids")
        n_grid = grids[0]
        # (trial, record, metric) squared errors
        errs = np.empty((len(ok), n_grid.size, len(metrics)))
        for ti, tr in enumerate(ok):
            for ri, rec in enumerate(tr.records):
                row = [
                    (rec.total_var - total_var_truth) ** 2,
                    *((rec.main_effect_vars - main_var_truth) ** 2),
                    *((rec.sobol - sobol_truth) ** 2),
                ]
                errs[ti, ri] = row
        for ri, n in enumerate(n_grid):
            mse = {m: float(errs[:, ri, mi].mean()) for mi, m in enumerate(metrics)}
            std = None
            if len(ok) >= 2:
                std = {m: float(errs[:, ri, mi].std(ddof=1)) for mi, m in enumerate(metrics)}
            records.append(AggregateRecord(strategy=strat, n_samples=int(n),
                                           mse=mse, std=std))
    return records


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def aggregate_csv_header(dim: int) -> List[str]:
    cols = ["strategy", "n"]
    for m in (["total_var"] + [f"mev_{i + 1}" for i in range(dim)]
              + [f"s_{i + 1}" for i in range(dim)]):
        cols += [f"mse_{m}", f"std_{m}"]
    return cols


def write_aggregate_csv(records: List[AggregateRecord], path, dim: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {AGGREGATE_CSV_VERSION}\n")
        fh.write(",".join(aggregate_csv_header(dim)) + "\n")
        for rec in records:
            row = [rec.strategy, str(rec.n_samples)]
            for m in rec.mse:
                row.append(_fmt(rec.mse[m]))
                row.append(_fmt(rec.std[m]) if rec.std is not None else "")
            fh.write(",".join(row) + "\n")


def emit_plot_data(records: List[AggregateRecord], path) -> None:
    """Long-format CSV `strategy,n,metric,mse,std` for any plotting tool."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {PLOTDATA_CSV_VERSION}\n")
        fh.write("strategy,n,metric,mse,std\n")
        for rec in records:
            for m, v in rec.mse.items():
                std = _fmt(rec.std[m]) if rec.std is not None else ""
                fh.write(f"{rec.strategy},{rec.n_samples},{m},{_fmt(v)},{std}\n")


def write_ratio_surface(s: float, case: int, path, y: float = 1.0,
                        max_da: float = 0.5, max_dy: float = 0.5,
                        n: int = 101) -> None:
    """Tabulated ratio-error surface over a (d_a, d_y) grid (plot-ready)."""
    if case in (1, 3):
        max_dy = min(max_dy, 0.9 * y)
    d_a = np.linspace(0.0, max_da, n)
    d_y = np.linspace(0.0, max_dy, n)
    surf = ratio_error_surface(s, y, d_a, d_y, case)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {RATIO_SURFACE_CSV_VERSION}\n")
        fh.write("case,s,y,d_a,d_y,d_s\n")
        for r, da in enumerate(d_a):
            for c, dy in enumerate(d_y):
                fh.write(f"{case},{_fmt(s)},{_fmt(y)},{_fmt(da)},{_fmt(dy)},"
                         f"{_fmt(surf[r, c])}\n")


def windowed_means(n_samples: np.ndarray, values: np.ndarray, width: int = 50) -> List[float]:
    """Means of `values` over consecutive `width`-wide windows of n_samples."""
    n_samples = np.asarray(n_samples)
    values = np.asarray(values)
    lo = int(n_samples.min())
    hi = int(n_samples.max())
    means = []
    for start in range(lo, hi + 1, width):
        mask = (n_samples >= start) & (n_samples < start + width)
        if np.any(mask):
            means.append(float(values[mask].mean()))
    return means


def study_report(traces: Dict[str, List[ConvergenceTrace]], sobol_truth: np.ndarray,
                 total_var_truth: float, window: int = 50) -> dict:
    """Diagnostic summary: final-sample medians and smoothed Sobol MSE curves."""
    report: dict = {"window": window, "strategies": {}}
    for strat, trs in traces.items():
        ok = [tr for tr in trs if tr.status != "error"]
        if not ok:
            continue
        final_tv_sq = [(tr.records[-1].total_var - total_var_truth) ** 2 for tr in ok]
        final_s_err = [float(np.abs(tr.records[-1].sobol - sobol_truth).mean()) for tr in ok]
        n_grid = ok[0].n_samples()
        sobol_mse = np.mean(
            [[float(((r.sobol - sobol_truth) ** 2).mean()) for r in tr.records] for tr in ok],
            axis=0,
        )
        windows = windowed_means(n_grid, sobol_mse, window)
        report["strategies"][strat] = {
            "n_trials": len(ok),
            "final_n": int(n_grid[-1]),
            "median_final_sq_err_total_var": float(np.median(final_tv_sq)),
            "mean_final_abs_err_sobol": float(np.mean(final_s_err)),
            "sobol_mse_windows": windows,
            "sobol_mse_windows_monotone": bool(
                all(b <= a for a, b in zip(windows, windows[1:]))
            ),
        }
    return report


def parse_config_file(path) -> dict:
    """Flat `key = value` study-config text; keys match StudyConfig fields."""
    values: dict = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"malformed config line: {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "strategies":
            values[key] = [v.strip() for v in val.split(",") if v.strip()]
        elif key == "emit":
            values[key] = {v.strip() for v in val.split(",") if v.strip()}
        elif key in ("paired",):
            values[key] = val.lower() in ("1", "true", "yes")
        elif key in ("epsilon",):
            values[key] = float(val)
        elif key in ("benchmark", "out", "estimator", "weight_mode",
                     "candidate_mode", "timing"):
            values[key] = val
        else:
            values[key] = int(val)
    return values
