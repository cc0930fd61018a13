"""Sequential active-learning loop: design, fit, estimate, select, repeat.

One record is appended per accepted sample (plus one for the initial
design), capturing the Sobol estimates of the refit model together with the
point that produced them. Candidate pools are redrawn every iteration from
a dedicated seeded stream and shared between index estimation and learning-
function evaluation within the iteration.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .acquisition import MarginalCache, SelectionResult, Strategy, resolve_weights, select_next
from .errors import GsaxError, InvalidParameterError
from .gp import Bounds, FitConfig, TrainingSet, fit
from .sobol import SobolEstimate, estimate_full_gp, estimate_mean_predictor

logger = logging.getLogger(__name__)

TRACE_CSV_VERSION = "gsax-trace-v1"

#: Consecutive duplicate-proposal skips tolerated before aborting a run.
MAX_CONSECUTIVE_SKIPS = 4


@dataclass(frozen=True)
class ConvergenceCriterion:
    epsilon: float = 0.005
    patience: int = 5

    def __post_init__(self):
        if self.epsilon <= 0 or self.patience < 1:
            raise InvalidParameterError("epsilon must be > 0 and patience >= 1")


@dataclass
class LoopConfig:
    n_initial: int = 10
    budget: int = 100
    n_candidates: int = 25000
    n_grid: int = 128
    strategy: Strategy = field(default_factory=lambda: Strategy("random"))
    seed: int = 0
    estimator: str = "mean_predictor"
    n_realizations: int = 100
    convergence: Optional[ConvergenceCriterion] = None
    candidate_mode: str = "uniform"
    basis: str = "linear"
    initial_fit_restarts: int = 5
    refit_restarts: int = 2

    def __post_init__(self):
        if self.n_initial < 2:
            raise InvalidParameterError("n_initial must be at least 2")
        if self.budget < self.n_initial:
            raise InvalidParameterError("budget must be at least n_initial")
        if self.n_candidates < 2:
            raise InvalidParameterError("n_candidates must be at least 2")
        if self.estimator not in ("mean_predictor", "full_gp"):
            raise InvalidParameterError("estimator must be 'mean_predictor' or 'full_gp'")
        if self.candidate_mode not in ("uniform", "lhs"):
            raise InvalidParameterError("candidate_mode must be 'uniform' or 'lhs'")


@dataclass
class TraceRecord:
    iteration: int
    n_samples: int
    total_var: float
    main_effect_vars: np.ndarray
    sobol: np.ndarray
    sobol_std: Optional[np.ndarray]
    x_selected: Optional[np.ndarray]
    score: float
    wall_ms: float
    fallback: bool = False


@dataclass
class ConvergenceTrace:
    strategy: str
    seed: int
    dim: int
    records: List[TraceRecord] = field(default_factory=list)
    status: str = "budget_exhausted"

    def sobol_matrix(self) -> np.ndarray:
        return np.array([r.sobol for r in self.records])

    def n_samples(self) -> np.ndarray:
        return np.array([r.n_samples for r in self.records])

    def to_json(self, timing: str = "zero") -> str:
        """Lossless JSON serialization (wall_ms zeroed unless timing='measured')."""
        def rec(r):
            return {
                "iteration": r.iteration,
                "n_samples": r.n_samples,
                "total_var": r.total_var,
                "main_effect_vars": r.main_effect_vars.tolist(),
                "sobol": r.sobol.tolist(),
                "sobol_std": None if r.sobol_std is None else r.sobol_std.tolist(),
                "x_selected": None if r.x_selected is None else r.x_selected.tolist(),
                "score": r.score,
                "wall_ms": r.wall_ms if timing == "measured" else 0.0,
                "fallback": r.fallback,
            }
        return json.dumps({
            "format": "gsax-trace-json-v1",
            "strategy": self.strategy,
            "seed": self.seed,
            "dim": self.dim,
            "status": self.status,
            "records": [rec(r) for r in self.records],
        })

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceTrace":
        data = json.loads(text)
        if data.get("format") != "gsax-trace-json-v1":
            raise InvalidParameterError("unrecognized trace format")
        records = [
            TraceRecord(
                iteration=r["iteration"],
                n_samples=r["n_samples"],
                total_var=r["total_var"],
                main_effect_vars=np.asarray(r["main_effect_vars"], dtype=float),
                sobol=np.asarray(r["sobol"], dtype=float),
                sobol_std=None if r["sobol_std"] is None else np.asarray(r["sobol_std"]),
                x_selected=None if r["x_selected"] is None else np.asarray(r["x_selected"]),
                score=r["score"],
                wall_ms=r["wall_ms"],
                fallback=r.get("fallback", False),
            )
            for r in data["records"]
        ]
        return cls(strategy=data["strategy"], seed=data["seed"], dim=data["dim"],
                   records=records, status=data["status"])


def lhs_sample(n: int, bounds: Bounds, seed) -> np.ndarray:
    """Latin hypercube: one uniform point per stratum, strata order permuted."""
    if n < 1:
        raise InvalidParameterError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = bounds.dim
    strata = rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T
    u = (strata + rng.random((n, d))) / n
    return bounds.denormalize(u)


def check_convergence(trace: ConvergenceTrace, epsilon: float, patience: int) -> bool:
    """True iff the last `patience` successive max-abs Sobol deltas are all < epsilon."""
    if len(trace.records) < patience + 1:
        return False
    S = trace.sobol_matrix()
    deltas = np.abs(np.diff(S[-(patience + 1):], axis=0)).max(axis=1)
    return bool(np.all(deltas < epsilon))


def _estimate(model, candidates, config: LoopConfig, est_seed: int) -> SobolEstimate:
    if config.estimator == "full_gp":
        return estimate_full_gp(model, candidates, n_grid=config.n_grid,
                                n_realizations=config.n_realizations, seed=est_seed)
    return estimate_mean_predictor(model, candidates, n_grid=config.n_grid)


def _draw_candidates(rng, bounds: Bounds, config: LoopConfig) -> np.ndarray:
    if config.candidate_mode == "lhs":
        return lhs_sample(config.n_candidates, bounds, rng)
    return rng.uniform(bounds.lower, bounds.upper, size=(config.n_candidates, bounds.dim))


def _is_duplicate(training: TrainingSet, x: np.ndarray) -> bool:
    u = training.bounds.normalize(x)
    U = training.normalized_inputs()
    return bool(np.abs(U - u).max(axis=1).min() <= 1e-12)


def run(func: Callable[[np.ndarray], float], bounds: Bounds,
        config: LoopConfig) -> ConvergenceTrace:
    """Execute the active-learning loop until convergence or budget."""
    ss = np.random.SeedSequence(config.seed)
    ss_design, ss_cand, ss_select, ss_est = ss.spawn(4)
    select_rng = np.random.default_rng(ss_select)

    def next_est_seed():
        return int(ss_est.spawn(1)[0].generate_state(1)[0])

    trace = ConvergenceTrace(strategy=config.strategy.cli_name, seed=config.seed,
                             dim=bounds.dim)

    t0 = time.perf_counter()
    X = lhs_sample(config.n_initial, bounds, np.random.default_rng(ss_design))
    y = np.array([float(func(row)) for row in X])
    training = TrainingSet(X, y, bounds)
    try:
        model = fit(training, basis=config.basis,
                    config=FitConfig(n_restarts=config.initial_fit_restarts,
                                     seed=config.seed))
    except GsaxError as exc:
        logger.error("initial fit failed: %s", exc)
        trace.status = "error"
        return trace

    candidates = _draw_candidates(np.random.default_rng(ss_cand.spawn(1)[0]), bounds, config)
    estimate = _estimate(model, candidates, config, next_est_seed())
    trace.records.append(TraceRecord(
        iteration=0, n_samples=training.n, total_var=estimate.total_var,
        main_effect_vars=estimate.main_effect_vars, sobol=estimate.indices,
        sobol_std=estimate.index_std, x_selected=None, score=float("nan"),
        wall_ms=(time.perf_counter() - t0) * 1e3,
    ))

    iteration = 0
    skips = 0
    while training.n < config.budget:
        t0 = time.perf_counter()
        cache = MarginalCache(model, config.n_grid) if config.strategy.uses_marginals else None
        weights = resolve_weights(config.strategy, bounds.dim, estimate.indices)
        try:
            sel: SelectionResult = select_next(model, candidates, config.strategy,
                                               select_rng, weights=weights, cache=cache)
        except GsaxError as exc:
            logger.error("selection failed at n=%d: %s", training.n, exc)
            trace.status = "error"
            return trace

        if _is_duplicate(training, sel.x):
            candidates = _draw_candidates(np.random.default_rng(ss_cand.spawn(1)[0]),
                                          bounds, config)
            sel = select_next(model, candidates, config.strategy, select_rng,
                              weights=weights, cache=cache)
            if _is_duplicate(training, sel.x):
                skips += 1
                logger.warning("duplicate proposal skipped at n=%d (%d consecutive)",
                               training.n, skips)
                if skips > MAX_CONSECUTIVE_SKIPS:
                    trace.status = "error"
                    return trace
                continue
        skips = 0

        training = training.append(sel.x, float(func(sel.x)))
        try:
            model = fit(training, basis=config.basis,
                        config=FitConfig(n_restarts=config.refit_restarts,
                                         seed=config.seed, warm_start=model.theta))
        except GsaxError as exc:
            logger.error("refit failed at n=%d: %s", training.n, exc)
            trace.status = "error"
            return trace

        candidates = _draw_candidates(np.random.default_rng(ss_cand.spawn(1)[0]),
                                      bounds, config)
        estimate = _estimate(model, candidates, config, next_est_seed())
        iteration += 1
        trace.records.append(TraceRecord(
            iteration=iteration, n_samples=training.n, total_var=estimate.total_var,
            main_effect_vars=estimate.main_effect_vars, sobol=estimate.indices,
            sobol_std=estimate.index_std, x_selected=np.asarray(sel.x, dtype=float),
            score=sel.score, wall_ms=(time.perf_counter() - t0) * 1e3,
            fallback=sel.fallback,
        ))

        if config.convergence is not None and check_convergence(
                trace, config.convergence.epsilon, config.convergence.patience):
            trace.status = "converged"
            return trace

    trace.status = "budget_exhausted"
    return trace


def _fmt(value: float) -> str:
    return repr(float(value))


def trace_csv_header(dim: int) -> List[str]:
    cols = ["trial", "iter", "n", "strategy", "total_var"]
    cols += [f"mev_{i + 1}" for i in range(dim)]
    cols += [f"s_{i + 1}" for i in range(dim)]
    cols += [f"sq_err_s_{i + 1}" for i in range(dim)]
    cols += [f"x_sel_{i + 1}" for i in range(dim)]
    cols += ["score", "wall_ms"]
    return cols


def export_trace_csv(trace: ConvergenceTrace, path, trial: int = 0,
                     truth: Optional[np.ndarray] = None,
                     timing: str = "zero") -> None:
    """Write the fixed-schema trace CSV.

    timing='zero' (default) writes 0 in wall_ms so that repeated runs are
    byte-identical; timing='measured' writes the recorded wall-clock times.
    """
    if timing not in ("zero", "measured"):
        raise InvalidParameterError("timing must be 'zero' or 'measured'")
    d = trace.dim
    nan_d = np.full(d, np.nan)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {TRACE_CSV_VERSION}\n")
        fh.write(",".join(trace_csv_header(d)) + "\n")
        for r in trace.records:
            sq_err = (r.sobol - truth) ** 2 if truth is not None else nan_d
            x_sel = r.x_selected if r.x_selected is not None else nan_d
            wall = r.wall_ms if timing == "measured" else 0.0
            row = [str(trial), str(r.iteration), str(r.n_samples), trace.strategy,
                   _fmt(r.total_var)]
            row += [_fmt(v) for v in r.main_effect_vars]
            row += [_fmt(v) for v in r.sobol]
            row += [_fmt(v) for v in sq_err]
            row += [_fmt(v) for v in x_sel]
            row += [_fmt(r.score), _fmt(wall)]
            fh.write(",".join(row) + "\n")


def read_trace_csv(path):
    """Parse a trace CSV back into (header, rows-of-floats-or-str) for checks."""
    with open(path, encoding="utf-8") as fh:
        version = fh.readline().strip().lstrip("# ")
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return version, header, rows
