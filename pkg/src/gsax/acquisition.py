"""Learning functions that score candidate points for the next evaluation.

EIGF and VIGF target global fit of the full surrogate (the denominator of
the Sobol ratio); the MUSIC family combines per-dimension improvements of
the main-effect GPs (the numerators) through a distance pre-factor. All
nearest-neighbor distances are measured in normalized input space so that
dimensions with different physical scales contribute comparably.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidParameterError, SelectionError
from .gp import GpModel
from .marginal import MainEffectGp, _marginal_mean, main_effect

STRATEGY_KINDS = (
    "random",
    "eigf",
    "vigf",
    "music_eigf_d1",
    "music_eigf_d2",
    "music_vigf_d1",
    "music_vigf_d2",
    "music_componentwise",
)

#: CLI spelling <-> internal strategy kind.
STRATEGY_NAMES = {
    "random": "random",
    "eigf": "eigf",
    "vigf": "vigf",
    "music-eigf-d1": "music_eigf_d1",
    "music-eigf-d2": "music_eigf_d2",
    "music-vigf-d1": "music_vigf_d1",
    "music-vigf-d2": "music_vigf_d2",
    "music-cw": "music_componentwise",
}

KIND_TO_NAME = {kind: name for name, kind in STRATEGY_NAMES.items()}

#: Estimated grid-interpolation error (in output units, relative to the
#: output scale) above which MUSIC evaluates the marginal mean exactly.
EXACT_EVAL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class Strategy:
    """A learning function plus its main-effect weighting rule."""

    kind: str
    weight_mode: str = "uniform"
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidParameterError(f"unknown strategy kind {self.kind!r}")
        if self.weight_mode not in ("uniform", "sobol_proportional"):
            raise InvalidParameterError("weight_mode must be 'uniform' or 'sobol_proportional'")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise InvalidParameterError("weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", w)

    @property
    def uses_marginals(self) -> bool:
        return self.kind.startswith("music")

    @property
    def cli_name(self) -> str:
        return KIND_TO_NAME[self.kind]

    @classmethod
    def from_name(cls, name: str, weight_mode: str = "uniform") -> "Strategy":
        if name not in STRATEGY_NAMES:
            raise InvalidParameterError(
                f"unknown strategy {name!r}; choose from {sorted(STRATEGY_NAMES)}"
            )
        return cls(STRATEGY_NAMES[name], weight_mode)


@dataclass
class CandidateScore:
    """Scoring detail for one candidate (kept for traceability/tests)."""

    index: int
    score: float
    exp_improvements: Optional[np.ndarray] = None
    var_improvements: Optional[np.ndarray] = None
    comp_distances: Optional[np.ndarray] = None
    euclid_sq: Optional[float] = None


@dataclass
class SelectionResult:
    """Outcome of one selection step."""

    x: np.ndarray
    score: float
    index: Optional[int] = None
    fallback: bool = False


def resolve_weights(strategy: Strategy, d: int,
                    sobol_indices: Optional[np.ndarray] = None) -> np.ndarray:
    """Main-effect weights: explicit > sobol-proportional > uniform."""
    if strategy.weights is not None:
        return strategy.weights
    if strategy.weight_mode == "sobol_proportional" and sobol_indices is not None:
        w = np.clip(np.asarray(sobol_indices, dtype=float), 0.0, None)
        if w.sum() > 0:
            return w / w.sum()
    return np.full(d, 1.0 / d)


class MarginalCache:
    """Per-dimension main-effect grids shared by the MUSIC scores.

    The mean is linearly interpolated from the grid unless its estimated
    interpolation error (curvature-based) exceeds EXACT_EVAL_THRESHOLD times
    the output scale, in which case the closed form is evaluated exactly.
    The variance always comes from the nearest grid node.
    """

    def __init__(self, model: GpModel, n_grid: int = 128):
        self.model = model
        self.n_grid = n_grid
        self._effects: Dict[int, MainEffectGp] = {}
        self._exact: Dict[int, bool] = {}
        U = model.training.normalized_inputs()
        self._sorted_coords_n = [np.sort(U[:, i]) for i in range(model.dim)]
        self._tree = cKDTree(U)

    def effect(self, i: int) -> MainEffectGp:
        if i not in self._effects:
            eff = main_effect(self.model, i, n_g=self.n_grid)
            self._effects[i] = eff
            curv = np.abs(np.diff(eff.mean, 2)).max() / 8.0 if eff.mean.size > 2 else 0.0
            scale = max(self.model.output_scale, 1e-12)
            self._exact[i] = curv > EXACT_EVAL_THRESHOLD * scale
        return self._effects[i]

    def mean_at(self, i: int, x: np.ndarray) -> np.ndarray:
        eff = self.effect(i)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self._exact[i]:
            lo, hi = self.model.bounds.lower[i], self.model.bounds.upper[i]
            # Nearest-neighbor queries repeat the same training coordinates;
            # evaluate the closed form once per distinct value.
            uniq, inverse = np.unique(x, return_inverse=True)
            if uniq.size < x.size // 2:
                vals = _marginal_mean(self.model, (i,), ((uniq - lo) / (hi - lo))[:, None])
                return vals[inverse]
            return _marginal_mean(self.model, (i,), ((x - lo) / (hi - lo))[:, None])
        return np.interp(x, eff.grid, eff.mean)

    def var_at(self, i: int, x: np.ndarray) -> np.ndarray:
        eff = self.effect(i)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h = eff.grid[1] - eff.grid[0]
        idx = np.clip(np.round((x - eff.grid[0]) / h).astype(int), 0, eff.grid.size - 1)
        return eff.var[idx]

    def nearest_coord_normalized(self, i: int, coords_n: np.ndarray) -> np.ndarray:
        """Nearest training coordinate (normalized) in dimension i."""
        sc = self._sorted_coords_n[i]
        coords_n = np.atleast_1d(coords_n)
        pos = np.searchsorted(sc, coords_n)
        left = np.clip(pos - 1, 0, sc.size - 1)
        right = np.clip(pos, 0, sc.size - 1)
        pick_right = np.abs(sc[right] - coords_n) < np.abs(sc[left] - coords_n)
        return np.where(pick_right, sc[right], sc[left])

    def nearest_sq_dist_normalized(self, U_query: np.ndarray) -> np.ndarray:
        dist, _ = self._tree.query(U_query)
        return dist**2


def _nearest_training_index(model: GpModel, u: np.ndarray) -> int:
    U = model.training.normalized_inputs()
    return int(np.argmin(np.sum((U - u) ** 2, axis=1)))


def eigf(model: GpModel, x: np.ndarray) -> float:
    """(yhat(x) - y at nearest training point)^2 + posterior variance."""
    x = np.asarray(x, dtype=float)
    u = model.bounds.normalize(x)
    j_star = _nearest_training_index(model, u)
    mu, var = model.predict(x)
    return (mu - model.training.outputs[j_star]) ** 2 + var


def vigf(model: GpModel, x: np.ndarray) -> float:
    """4 sigma^2(x) [(mu(x) - y at nearest training point)^2 + 2 sigma^2(x)]."""
    x = np.asarray(x, dtype=float)
    u = model.bounds.normalize(x)
    j_star = _nearest_training_index(model, u)
    mu, var = model.predict(x)
    return 4.0 * var * ((mu - model.training.outputs[j_star]) ** 2 + 2.0 * var)


def music_improvements(model: GpModel, cache: MarginalCache,
                       x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Expected and variance improvement of each main-effect GP at x.

    E[I_i] = (mu_i(x_i) - mu_i(x_i*))^2 + var_i(x_i) with x_i* the nearest
    training coordinate in dimension i; V[I_i] = 4 var_i [(d mu)^2 + 2 var_i].
    """
    x = np.asarray(x, dtype=float)
    d = model.dim
    exp_imp = np.empty(d)
    var_imp = np.empty(d)
    u = model.bounds.normalize(x)
    for i in range(d):
        span = model.bounds.span[i]
        lo = model.bounds.lower[i]
        nn_n = cache.nearest_coord_normalized(i, u[i])[0]
        mu_x = float(cache.mean_at(i, x[i])[0])
        mu_nn = float(cache.mean_at(i, lo + nn_n * span)[0])
        var_x = float(cache.var_at(i, x[i])[0])
        gap2 = (mu_x - mu_nn) ** 2
        exp_imp[i] = gap2 + var_x
        var_imp[i] = 4.0 * var_x * (gap2 + 2.0 * var_x)
    return exp_imp, var_imp


def music_score(variant: str, weights: np.ndarray, exp_imp: np.ndarray,
                var_imp: np.ndarray, comp_dists: np.ndarray, euclid_sq: float) -> float:
    """Combine per-dimension improvements with the distance pre-factor.

    D1 variants weight each dimension by its component-wise distance inside
    the sum; D2 variants multiply the weighted sum by the squared Euclidean
    distance to the nearest training point.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise InvalidParameterError("weights must be nonnegative and sum to 1")
    imp = {"music_eigf_d1": exp_imp, "music_eigf_d2": exp_imp,
           "music_vigf_d1": var_imp, "music_vigf_d2": var_imp}.get(variant)
    if imp is None:
        raise InvalidParameterError(f"not a MUSIC variant: {variant!r}")
    if variant.endswith("d1"):
        return float(np.sum(weights * np.asarray(comp_dists) * imp))
    return float(euclid_sq * np.sum(weights * imp))


def score_candidate(model: GpModel, cache: MarginalCache, x: np.ndarray, index: int,
                    strategy: Strategy, weights: np.ndarray) -> CandidateScore:
    """Detailed MUSIC score of a single candidate, with per-dimension terms."""
    x = np.asarray(x, dtype=float)
    exp_imp, var_imp = music_improvements(model, cache, x)
    u = model.bounds.normalize(x)
    comp_d = np.abs(u - np.array([
        cache.nearest_coord_normalized(i, u[i])[0] for i in range(model.dim)
    ]))
    eucl_sq = float(cache.nearest_sq_dist_normalized(u[None, :])[0])
    score = music_score(strategy.kind, weights, exp_imp, var_imp, comp_d, eucl_sq)
    return CandidateScore(index=index, score=score, exp_improvements=exp_imp,
                          var_improvements=var_imp, comp_distances=comp_d,
                          euclid_sq=eucl_sq)


def _music_candidate_terms(model, cache, candidates):
    """Vectorized E[I], V[I], per-dim distances and Euclid^2 for all candidates."""
    C = np.atleast_2d(candidates)
    Un = model.bounds.normalize(C)
    d = model.dim
    m = C.shape[0]
    exp_imp = np.empty((m, d))
    var_imp = np.empty((m, d))
    comp_d = np.empty((m, d))
    for i in range(d):
        span = model.bounds.span[i]
        lo = model.bounds.lower[i]
        nn_n = cache.nearest_coord_normalized(i, Un[:, i])
        mu_x = cache.mean_at(i, C[:, i])
        mu_nn = cache.mean_at(i, lo + nn_n * span)
        var_x = cache.var_at(i, C[:, i])
        gap2 = (mu_x - mu_nn) ** 2
        exp_imp[:, i] = gap2 + var_x
        var_imp[:, i] = 4.0 * var_x * (gap2 + 2.0 * var_x)
        comp_d[:, i] = np.abs(Un[:, i] - nn_n)
    eucl_sq = cache.nearest_sq_dist_normalized(Un)
    return exp_imp, var_imp, comp_d, eucl_sq


def score_candidates(model: GpModel, candidates: np.ndarray, strategy: Strategy,
                     weights: Optional[np.ndarray] = None,
                     cache: Optional[MarginalCache] = None) -> np.ndarray:
    """Score every candidate under the strategy (not defined for 'random')."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if strategy.kind == "random":
        raise InvalidParameterError("the random strategy does not score candidates")
    if strategy.kind in ("eigf", "vigf"):
        Un = model.bounds.normalize(C)
        U = model.training.normalized_inputs()
        _, idx = cKDTree(U).query(Un)
        y_star = model.training.outputs[idx]
        mu, var = model.predict(C)
        gap2 = (np.atleast_1d(mu) - y_star) ** 2
        var = np.atleast_1d(var)
        if strategy.kind == "eigf":
            return gap2 + var
        return 4.0 * var * (gap2 + 2.0 * var)
    if cache is None:
        cache = MarginalCache(model)
    w = weights if weights is not None else resolve_weights(strategy, model.dim)
    exp_imp, var_imp, comp_d, eucl_sq = _music_candidate_terms(model, cache, C)
    imp = exp_imp if "eigf" in strategy.kind else var_imp
    if strategy.kind.endswith("d1"):
        return (w[None, :] * comp_d * imp).sum(axis=1)
    return eucl_sq * (imp @ w)


def select_next(model: GpModel, candidates: np.ndarray, strategy: Strategy,
                rng: np.random.Generator, weights: Optional[np.ndarray] = None,
                cache: Optional[MarginalCache] = None) -> SelectionResult:
    """Pick the next sample: argmax of the strategy score (first index wins ties)."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if C.shape[0] == 0:
        raise InvalidParameterError("candidate set must be nonempty")
    if strategy.kind == "random":
        idx = int(rng.integers(C.shape[0]))
        return SelectionResult(x=C[idx], score=np.nan, index=idx)
    if strategy.kind == "music_componentwise":
        return select_componentwise_music(model, cache or MarginalCache(model), C, rng)
    scores = score_candidates(model, C, strategy, weights=weights, cache=cache)
    safe = np.where(np.isfinite(scores), scores, -np.inf)
    if not np.any(np.isfinite(safe)):
        raise SelectionError("no candidate produced a finite score")
    idx = int(np.argmax(safe))
    return SelectionResult(x=C[idx], score=float(scores[idx]), index=idx)


def select_componentwise_music(model: GpModel, cache: MarginalCache,
                               candidates: np.ndarray,
                               rng: np.random.Generator) -> SelectionResult:
    """Componentwise rule: best expected main-effect improvement fixes one
    coordinate; the remaining coordinates are drawn uniformly.

    Falls back to a fully random point (flagged) when every improvement is
    zero, i.e. the surrogate is flat and certain.
    """
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    exp_imp, _, _, _ = _music_candidate_terms(model, cache, C)
    k, i_star = np.unravel_index(np.argmax(exp_imp), exp_imp.shape)
    bounds = model.bounds
    x = rng.uniform(bounds.lower, bounds.upper)
    if exp_imp[k, i_star] <= 0.0:
        return SelectionResult(x=x, score=0.0, fallback=True)
    x[i_star] = C[k, i_star]
    return SelectionResult(x=x, score=float(exp_imp[k, i_star]), index=int(i_star))
