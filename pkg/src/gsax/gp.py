"""Kriging surrogate: Gaussian correlation, MLE fit, posterior mean/variance.

The model is fit internally on normalized data (inputs mapped to the unit
hypercube, outputs standardized to zero mean / unit variance); predictions
are reported in original units. The correlation matrix carries an optional
relative nugget tau, in which case every occurrence of R is replaced by
R_n = (1 - tau) * R + tau * I.
"""

import json
import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.linalg import cholesky, cho_solve, qr, solve_triangular
from scipy.optimize import minimize

from .errors import (
    ConditioningError,
    DuplicateInputError,
    FitError,
    InvalidParameterError,
)

logger = logging.getLogger(__name__)

#: Jitter ladder tried on the diagonal when a Cholesky factorization fails.
JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8)

#: Constant diagonal jitter inside the likelihood objective. The adaptive
#: ladder switches levels between nearby theta evaluations, which makes the
#: objective discontinuous and stalls the line search on dense designs; a
#: fixed tiny jitter keeps it smooth. The final model build still uses the
#: ladder starting from zero.
OPT_JITTER = 1e-10

#: Tolerance (Chebyshev distance in normalized inputs) for duplicate rows.
DUPLICATE_TOL = 1e-12


class ExtrapolationWarning(UserWarning):
    """Prediction requested outside the training bounds."""


@dataclass(frozen=True)
class Bounds:
    """Per-dimension box bounds of the uniform input distribution."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise InvalidParameterError("bounds must be 1-d arrays of equal length >= 1")
        if not np.all(lower < upper):
            raise InvalidParameterError("each lower bound must be strictly below its upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.span

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.span

    def contains(self, x: np.ndarray, atol: float = 1e-12) -> bool:
        x = np.atleast_2d(x)
        return bool(
            np.all(x >= self.lower - atol * np.abs(self.span))
            and np.all(x <= self.upper + atol * np.abs(self.span))
        )


@dataclass(frozen=True)
class TrainingSet:
    """Paired input samples and scalar outputs with uniform box bounds."""

    inputs: np.ndarray
    outputs: np.ndarray
    bounds: Bounds

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_1d(np.asarray(self.outputs, dtype=float))
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        if X.ndim != 2 or X.shape[1] != self.bounds.dim:
            raise InvalidParameterError("inputs must be an (n, d) matrix matching bounds")
        if y.shape != (X.shape[0],):
            raise InvalidParameterError("outputs must be a length-n vector")
        if X.shape[0] < 2:
            raise InvalidParameterError("at least 2 training points are required")
        if not self.bounds.contains(X):
            raise InvalidParameterError("training inputs must lie within bounds")
        U = self.bounds.normalize(X)
        # Chebyshev-distance duplicate check in normalized space.
        diff = np.abs(U[:, None, :] - U[None, :, :]).max(axis=2)
        np.fill_diagonal(diff, np.inf)
        if diff.min() <= DUPLICATE_TOL:
            i, j = np.unravel_index(np.argmin(diff), diff.shape)
            raise DuplicateInputError(f"duplicate training inputs at rows {i} and {j}")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def normalized_inputs(self) -> np.ndarray:
        return self.bounds.normalize(self.inputs)

    def append(self, x: np.ndarray, y: float) -> "TrainingSet":
        """New TrainingSet with one more (x, y) pair (duplicates rejected)."""
        X = np.vstack([self.inputs, np.asarray(x, dtype=float)])
        Y = np.append(self.outputs, float(y))
        return TrainingSet(X, Y, self.bounds)


@dataclass
class FitConfig:
    """Controls the multi-start likelihood maximization."""

    n_restarts: int = 5
    seed: int = 0
    theta_bounds: Tuple[float, float] = (1e-3, 1e3)
    maxiter: int = 200
    warm_start: Optional[np.ndarray] = None
    nugget_bounds: Tuple[float, float] = (1e-8, 0.99)


def gaussian_correlation(x1: np.ndarray, x2: np.ndarray, theta: np.ndarray) -> float:
    """Product Gaussian correlation prod_k exp(-theta_k * |x1_k - x2_k|^2)."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if x1.shape != x2.shape or theta.shape != x1.shape:
        raise InvalidParameterError("x1, x2 and theta must share the same length")
    if np.any(theta <= 0):
        raise InvalidParameterError("theta must be strictly positive")
    return float(np.exp(-np.sum(theta * (x1 - x2) ** 2)))


def _basis_matrix(U: np.ndarray, basis: str) -> np.ndarray:
    U = np.atleast_2d(U)
    if basis == "constant":
        return np.ones((U.shape[0], 1))
    if basis == "linear":
        return np.hstack([np.ones((U.shape[0], 1)), U])
    raise InvalidParameterError(f"unknown basis {basis!r}; use 'constant' or 'linear'")


def _squared_dists(U: np.ndarray) -> np.ndarray:
    """(d, n, n) per-dimension squared distances between rows of U."""
    diff = U[:, None, :] - U[None, :, :]
    return np.ascontiguousarray(np.moveaxis(diff**2, 2, 0))


def _corr_matrix(sqd: np.ndarray, theta: np.ndarray, tau: float) -> np.ndarray:
    R = np.exp(-np.tensordot(theta, sqd, axes=(0, 0)))
    if tau > 0.0:
        n = R.shape[0]
        R = (1.0 - tau) * R + tau * np.eye(n)
    return R


def _chol_with_jitter(R: np.ndarray) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of R, escalating diagonal jitter on failure."""
    n = R.shape[0]
    for jitter in JITTER_LADDER:
        try:
            C = cholesky(R + jitter * np.eye(n) if jitter else R, lower=True)
            return C, jitter
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(
        f"correlation matrix not positive definite after jitter up to {JITTER_LADDER[-1]:g}"
    )


class _Decomposition:
    """GLS/likelihood quantities for fixed hyperparameters."""

    __slots__ = ("C", "jitter", "F", "Ft", "G", "beta", "gamma", "rho", "sigma2", "logdet")

    def __init__(self, R, F, Yn):
        n = R.shape[0]
        self.C, self.jitter = _chol_with_jitter(R)
        self.F = F
        Yt = solve_triangular(self.C, Yn, lower=True)
        self.Ft = solve_triangular(self.C, F, lower=True)
        Q, self.G = qr(self.Ft, mode="economic")
        self.beta = solve_triangular(self.G, Q.T @ Yt, lower=False)
        self.rho = Yt - self.Ft @ self.beta
        self.sigma2 = float(self.rho @ self.rho) / n
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.C))))

    def gamma_vector(self) -> np.ndarray:
        """R^{-1} (Y - F beta)."""
        return solve_triangular(self.C.T, self.rho, lower=False)


def _profile_nll_and_grad(z, sqd, F, Yn, estimate_nugget, fixed_tau):
    """Negative profile log-likelihood and gradient in log/logit coordinates.

    z holds log(theta) for each dimension and, when the nugget is estimated,
    a final logit(tau) coordinate. beta and sigma_z^2 are profiled out in
    closed form, so the objective reduces to n*log(sigma2) + log det R.
    """
    d = sqd.shape[0]
    n = F.shape[0]
    theta = np.exp(z[:d])
    if estimate_nugget:
        tau = 1.0 / (1.0 + np.exp(-z[d]))
    else:
        tau = fixed_tau
    R_pure = np.exp(-np.tensordot(theta, sqd, axes=(0, 0)))
    R = (1.0 - tau) * R_pure + tau * np.eye(n) if tau > 0 else R_pure
    try:
        dec = _Decomposition(R + OPT_JITTER * np.eye(n), F, Yn)
    except ConditioningError:
        return np.inf, np.zeros_like(z)
    if dec.sigma2 <= 0.0:
        return np.inf, np.zeros_like(z)
    value = n * np.log(dec.sigma2) + dec.logdet

    gamma = dec.gamma_vector()
    Rinv = cho_solve((dec.C, True), np.eye(n))
    grad = np.empty_like(z)
    scale = (1.0 - tau) if tau > 0 else 1.0
    # dR/dtheta_k = -(1-tau) * D_k o R_pure ; envelope theorem handles beta.
    for k in range(d):
        dR = -scale * sqd[k] * R_pure
        tr_term = float(np.sum(Rinv * dR))
        quad_term = float(gamma @ dR @ gamma)
        grad[k] = (tr_term - quad_term / dec.sigma2) * theta[k]
    if estimate_nugget:
        dR = np.eye(n) - R_pure
        tr_term = float(np.sum(Rinv * dR))
        quad_term = float(gamma @ dR @ gamma)
        grad[d] = (tr_term - quad_term / dec.sigma2) * tau * (1.0 - tau)
    return value, grad


class GpModel:
    """Fitted Kriging surrogate. Immutable once constructed.

    All linear-algebra caches live in normalized space; `predict` and the
    marginal computations convert back to original units.
    """

    def __init__(self, training: TrainingSet, theta: np.ndarray, basis: str,
                 nugget: float = 0.0):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (training.dim,) or np.any(theta <= 0):
            raise InvalidParameterError("theta must be a positive vector of length d")
        if not 0.0 <= nugget < 1.0:
            raise InvalidParameterError("nugget must lie in [0, 1)")
        self.training = training
        self.theta = theta
        self.basis = basis
        self.nugget = float(nugget)

        self._U = training.normalized_inputs()
        self._y_mean = float(training.outputs.mean())
        y_std = float(training.outputs.std())
        self._y_std = y_std if y_std > 0.0 else 1.0
        self._Yn = (training.outputs - self._y_mean) / self._y_std

        F = _basis_matrix(self._U, basis)
        if training.n < F.shape[1] + 1:
            raise InvalidParameterError(
                f"need at least p+1 = {F.shape[1] + 1} points for basis {basis!r}"
            )
        sqd = _squared_dists(self._U)
        R = _corr_matrix(sqd, theta, self.nugget)
        self._dec = _Decomposition(R, F, self._Yn)
        self._gamma = self._dec.gamma_vector()
        if self._dec.sigma2 > 0.0:
            self._log_likelihood = -0.5 * (
                self._dec.logdet
                + training.n * np.log(2.0 * np.pi * self._dec.sigma2)
                + training.n
            )
        else:
            # Degenerate (e.g. constant outputs): density collapses to a point mass.
            self._log_likelihood = np.inf

    # -- read-only views ---------------------------------------------------

    @property
    def dim(self) -> int:
        return self.training.dim

    @property
    def bounds(self) -> Bounds:
        return self.training.bounds

    @property
    def beta(self) -> np.ndarray:
        return self._dec.beta

    @property
    def sigma_z2(self) -> float:
        """Process variance in standardized output units."""
        return self._dec.sigma2

    @property
    def jitter(self) -> float:
        return self._dec.jitter

    @property
    def log_likelihood_value(self) -> float:
        return self._log_likelihood

    @property
    def output_scale(self) -> float:
        return self._y_std

    # -- internals shared with the marginal module --------------------------

    def _normalized(self):
        """(U, Yn, F, C, beta, gamma, G) in normalized coordinates."""
        d = self._dec
        return self._U, self._Yn, d.F, d.C, d.beta, self._gamma, d.G

    def _cross_correlation(self, Ux: np.ndarray) -> np.ndarray:
        """(m, n) pure correlations between normalized query rows and training."""
        # Accumulate the exponent dimension by dimension to avoid an
        # (m, n, d) temporary; this path dominates candidate scoring.
        acc = np.zeros((Ux.shape[0], self._U.shape[0]))
        for j in range(self.dim):
            diff = Ux[:, j, None] - self._U[None, :, j]
            acc -= self.theta[j] * diff**2
        return np.exp(acc, out=acc)

    # -- prediction ----------------------------------------------------------

    def predict(self, x: np.ndarray) -> Tuple[Union[float, np.ndarray], Union[float, np.ndarray]]:
        """Posterior mean and variance at x, in original units.

        Accepts a single d-vector or an (m, d) matrix. Out-of-bounds inputs
        are allowed (extrapolation) but emit an ExtrapolationWarning.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise InvalidParameterError(f"expected points of dimension {self.dim}")
        if not self.bounds.contains(X):
            warnings.warn("prediction point outside training bounds", ExtrapolationWarning,
                          stacklevel=2)
        Ux = self.bounds.normalize(X)
        Rx = self._cross_correlation(Ux)
        f = _basis_matrix(Ux, self.basis)
        dec = self._dec

        mean_n = f @ dec.beta + Rx @ self._gamma
        rt = solve_triangular(dec.C, Rx.T, lower=True)
        u = dec.Ft.T @ rt - f.T
        v = solve_triangular(dec.G.T, u, lower=True)
        factor = 1.0 - np.sum(rt**2, axis=0) + np.sum(v**2, axis=0)
        var_n = dec.sigma2 * factor
        # With a nugget the literal R -> R_n substitution makes this
        # expression genuinely negative near training points, so the gate
        # only applies to interpolating models. Well-conditioned fits stay
        # below ~1e-10 sigma_z^2 (asserted in tests); dense designs carry
        # rounding noise proportional to the correlation condition number,
        # so the hard error only fires at clearly pathological magnitudes.
        if self.nugget == 0.0 and dec.sigma2 > 0:
            excursion = -min(0.0, float(var_n.min()))
            if excursion > 1e-6 * dec.sigma2:
                raise ConditioningError(
                    f"posterior variance excursion {excursion:.3e} exceeds 1e-6 * sigma_z^2"
                )
        var_n = np.maximum(var_n, 0.0)

        mean = self._y_mean + self._y_std * mean_n
        var = self._y_std**2 * var_n
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def predict_mean(self, x: np.ndarray) -> np.ndarray:
        """Posterior mean only (cheaper: skips the variance solves)."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        Ux = self.bounds.normalize(X)
        f = _basis_matrix(Ux, self.basis)
        mean_n = f @ self._dec.beta + self._cross_correlation(Ux) @ self._gamma
        return self._y_mean + self._y_std * mean_n

    def predict_cov(self, x1: np.ndarray, x2: Optional[np.ndarray] = None) -> np.ndarray:
        """Posterior covariance matrix between two point sets, original units."""
        A = np.atleast_2d(np.asarray(x1, dtype=float))
        B = A if x2 is None else np.atleast_2d(np.asarray(x2, dtype=float))
        Ua, Ub = self.bounds.normalize(A), self.bounds.normalize(B)
        dec = self._dec
        diff = Ua[:, None, :] - Ub[None, :, :]
        R_ab = np.exp(-np.tensordot(diff**2, self.theta, axes=(2, 0)))
        ra = solve_triangular(dec.C, self._cross_correlation(Ua).T, lower=True)
        rb = solve_triangular(dec.C, self._cross_correlation(Ub).T, lower=True)
        ta = dec.Ft.T @ ra - _basis_matrix(Ua, self.basis).T
        tb = dec.Ft.T @ rb - _basis_matrix(Ub, self.basis).T
        va = solve_triangular(dec.G.T, ta, lower=True)
        vb = solve_triangular(dec.G.T, tb, lower=True)
        cov_n = dec.sigma2 * (R_ab - ra.T @ rb + va.T @ vb)
        return self._y_std**2 * cov_n

    def predict_cov_pairs(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Posterior covariance of row-paired points: Cov(Y(x1[k]), Y(x2[k]))."""
        A = np.atleast_2d(np.asarray(x1, dtype=float))
        B = np.atleast_2d(np.asarray(x2, dtype=float))
        if A.shape != B.shape:
            raise InvalidParameterError("x1 and x2 must have identical shapes")
        Ua, Ub = self.bounds.normalize(A), self.bounds.normalize(B)
        dec = self._dec
        R_ab = np.exp(-np.tensordot((Ua - Ub) ** 2, self.theta, axes=(1, 0)))
        ra = solve_triangular(dec.C, self._cross_correlation(Ua).T, lower=True)
        rb = solve_triangular(dec.C, self._cross_correlation(Ub).T, lower=True)
        ta = dec.Ft.T @ ra - _basis_matrix(Ua, self.basis).T
        tb = dec.Ft.T @ rb - _basis_matrix(Ub, self.basis).T
        va = solve_triangular(dec.G.T, ta, lower=True)
        vb = solve_triangular(dec.G.T, tb, lower=True)
        cov_n = dec.sigma2 * (R_ab - np.sum(ra * rb, axis=0) + np.sum(va * vb, axis=0))
        return self._y_std**2 * cov_n

    # -- serialization --------------------------------------------------------

    def to_json(self) -> str:
        """Self-describing text record; caches are rebuilt on load."""
        payload = {
            "format": "gsax-gp-v1",
            "basis": self.basis,
            "theta": self.theta.tolist(),
            "nugget": self.nugget,
            "beta": self._dec.beta.tolist(),
            "sigma_z2": self._dec.sigma2,
            "jitter": self._dec.jitter,
            "y_mean": self._y_mean,
            "y_std": self._y_std,
            "bounds_lower": self.bounds.lower.tolist(),
            "bounds_upper": self.bounds.upper.tolist(),
            "inputs": self.training.inputs.tolist(),
            "outputs": self.training.outputs.tolist(),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GpModel":
        payload = json.loads(text)
        if payload.get("format") != "gsax-gp-v1":
            raise InvalidParameterError("unrecognized model record format")
        training = TrainingSet(
            np.asarray(payload["inputs"], dtype=float),
            np.asarray(payload["outputs"], dtype=float),
            Bounds(np.asarray(payload["bounds_lower"]), np.asarray(payload["bounds_upper"])),
        )
        return cls(training, np.asarray(payload["theta"], dtype=float),
                   payload["basis"], payload["nugget"])


def log_likelihood(theta: np.ndarray, training: TrainingSet, basis: str = "linear",
                   nugget: float = 0.0) -> float:
    """Profile log-likelihood of (theta, nugget): beta, sigma_z^2 at their optima.

    Returns -inf (optimizer-safe) when the correlation matrix cannot be
    factorized even with jitter.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(theta <= 0):
        raise InvalidParameterError("theta must be strictly positive")
    try:
        model = GpModel(training, theta, basis, nugget)
    except ConditioningError:
        logger.warning("non-SPD correlation matrix for theta=%s", theta)
        return -np.inf
    return model.log_likelihood_value


def _restart_points(d, config, estimate_nugget, rng):
    """Scrambled-grid (Latin hypercube) restart points in log-theta space."""
    lo, hi = np.log(config.theta_bounds[0]), np.log(config.theta_bounds[1])
    m = config.n_restarts
    pts = []
    if m > 0:
        strata = (rng.permuted(np.tile(np.arange(m), (d, 1)), axis=1).T
                  + rng.random((m, d))) / m
        pts = list(lo + strata * (hi - lo))
    if estimate_nugget:
        tlo, thi = config.nugget_bounds
        taus = rng.uniform(tlo, min(thi, 0.5), size=len(pts))
        pts = [np.append(p, np.log(t / (1 - t))) for p, t in zip(pts, taus)]
    return pts


def fit(training: TrainingSet, basis: str = "linear", nugget_mode: str = "none",
        nugget: float = 0.0, config: Optional[FitConfig] = None) -> GpModel:
    """Maximum-likelihood Kriging fit.

    nugget_mode: 'none' (interpolating), 'fixed' (use `nugget`), or
    'estimated' (tau optimized jointly with theta).
    """
    if config is None:
        config = FitConfig()
    if nugget_mode not in ("none", "fixed", "estimated"):
        raise InvalidParameterError("nugget_mode must be 'none', 'fixed' or 'estimated'")
    estimate_nugget = nugget_mode == "estimated"
    fixed_tau = float(nugget) if nugget_mode == "fixed" else 0.0
    if nugget_mode == "fixed" and not 0.0 <= fixed_tau < 1.0:
        raise InvalidParameterError("fixed nugget must lie in [0, 1)")

    d = training.dim
    U = training.normalized_inputs()
    y_mean = training.outputs.mean()
    y_std = training.outputs.std()
    Yn = (training.outputs - y_mean) / (y_std if y_std > 0 else 1.0)
    F = _basis_matrix(U, basis)
    if training.n < F.shape[1] + 1:
        raise InvalidParameterError(
            f"need at least p+1 = {F.shape[1] + 1} points for basis {basis!r}"
        )
    sqd = _squared_dists(U)

    if y_std == 0.0:
        # Constant outputs: the likelihood is flat in theta, skip optimization.
        return GpModel(training, np.ones(d), basis, fixed_tau)

    rng = np.random.default_rng(config.seed)
    starts = _restart_points(d, config, estimate_nugget, rng)
    if config.warm_start is not None:
        warm = np.log(np.asarray(config.warm_start, dtype=float))
        if estimate_nugget:
            warm = np.append(warm, 0.0)
        starts.insert(0, warm)
    if not starts:
        starts = [np.zeros(d + (1 if estimate_nugget else 0))]

    lo, hi = np.log(config.theta_bounds[0]), np.log(config.theta_bounds[1])
    z_bounds = [(lo, hi)] * d
    if estimate_nugget:
        tlo, thi = config.nugget_bounds
        z_bounds.append((np.log(tlo / (1 - tlo)), np.log(thi / (1 - thi))))

    best = None
    any_converged = False
    for z0 in starts:
        res = minimize(
            _profile_nll_and_grad,
            np.clip(z0, [b[0] for b in z_bounds], [b[1] for b in z_bounds]),
            args=(sqd, F, Yn, estimate_nugget, fixed_tau),
            method="L-BFGS-B",
            jac=True,
            bounds=z_bounds,
            options={"maxiter": config.maxiter},
        )
        if best is None or res.fun < best.fun:
            best = res
        # Dense designs make the likelihood numerically noisy near its
        # optimum; L-BFGS-B then stops with an "abnormal" line search even
        # though the projected gradient is tiny. Treat that as converged.
        stalled_at_optimum = (
            res.status == 2
            and np.isfinite(res.fun)
            and float(np.max(np.abs(res.jac))) <= 1e-2 * (1.0 + abs(res.fun))
        )
        any_converged = any_converged or bool(res.success) or stalled_at_optimum

    theta = np.exp(best.x[:d])
    tau = 1.0 / (1.0 + np.exp(-best.x[d])) if estimate_nugget else fixed_tau
    model = GpModel(training, theta, basis, tau)
    if not any_converged:
        raise FitError(
            f"likelihood optimizer did not converge in any of {len(starts)} starts",
            best_model=model,
        )
    return model
