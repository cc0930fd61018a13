"""Main-effect and interaction-effect GPs via closed-form kernel integrals.

Marginalizing the Kriging surrogate over all inputs except a chosen subset
yields another Gaussian process. For uniform inputs and the Gaussian
correlation, the required 1-d and 2-d integrals of the kernel have closed
forms in the normal CDF, so the marginal mean and covariance are exact
(no quadrature). All internal computation happens in normalized space;
results are returned in original units.
"""

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import erf

from .errors import ConditioningError, InvalidParameterError
from .gp import GpModel

#: PSD repair beyond this fraction of the process variance is treated as a
#: conditioning failure. Well-spread designs need far less (~1e-10 sigma_z^2);
#: the recorded jitter lets callers assert tighter bounds per scenario.
PSD_JITTER_CAP = 1e-6


def kernel_integral_1d(theta: float, t, a: float, b: float):
    """Uniform average of the Gaussian kernel: (1/(b-a)) * int_a^b e^{-theta (x-t)^2} dx.

    Equals (1/(b-a)) sqrt(pi/theta) [Phi(sqrt(2 theta)(b-t)) - Phi(sqrt(2 theta)(a-t))],
    written here through erf. Vectorized over t.
    """
    if theta <= 0:
        raise InvalidParameterError("theta must be strictly positive")
    if a >= b:
        raise InvalidParameterError("require a < b")
    t = np.asarray(t, dtype=float)
    s = np.sqrt(theta)
    val = np.sqrt(np.pi / theta) / (2.0 * (b - a)) * (erf(s * (b - t)) - erf(s * (a - t)))
    return float(val) if val.ndim == 0 else val


def kernel_integral_2d(theta: float, a: float, b: float) -> float:
    """Double uniform average of the Gaussian kernel over [a, b]^2.

    Closed form (1/(b-a))^2 sqrt(pi/theta) [a + b - 2(a Phi(c) + b Phi(-c))
    - (1 - e^{-theta (b-a)^2}) / sqrt(pi theta)] with c = sqrt(2 theta)(b-a);
    simplified below using Phi(c) - Phi(-c) = erf(sqrt(theta)(b-a)).
    """
    if theta <= 0:
        raise InvalidParameterError("theta must be strictly positive")
    if a >= b:
        raise InvalidParameterError("require a < b")
    w = b - a
    bracket = w * erf(np.sqrt(theta) * w) + np.expm1(-theta * w * w) / np.sqrt(np.pi * theta)
    return float(np.sqrt(np.pi / theta) / w**2 * bracket)


@dataclass(frozen=True)
class MainEffectGp:
    """One-dimensional marginal GP A_i(x_i) evaluated on a grid."""

    dim: int
    grid: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    jitter: float = 0.0

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov)


@dataclass(frozen=True)
class InteractionEffectGp:
    """Marginal GP over a subset of input dimensions on a product grid."""

    dims: Tuple[int, ...]
    grid: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    jitter: float = 0.0


def uniform_grid(model: GpModel, i: int, n_g: int = 128) -> np.ndarray:
    """Equally spaced grid (endpoints included) over [a_i, b_i]."""
    b = model.bounds
    return np.linspace(b.lower[i], b.upper[i], n_g)


def _check_dim(model: GpModel, i: int) -> None:
    if not 0 <= i < model.dim:
        raise InvalidParameterError(f"dimension index {i} out of range for d={model.dim}")


def _normalize_grid(model: GpModel, i: int, grid: np.ndarray) -> np.ndarray:
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    lo, hi = model.bounds.lower[i], model.bounds.upper[i]
    if grid.min() < lo - 1e-12 or grid.max() > hi + 1e-12:
        raise InvalidParameterError(f"grid must lie within [{lo}, {hi}] for dimension {i}")
    return (grid - lo) / (hi - lo)


def _integral_table(model: GpModel) -> np.ndarray:
    """(n, d) table of 1-d kernel integrals over [0,1] at the training rows.

    Memoized on the (immutable) model, since every marginal quantity needs it.
    """
    cached = getattr(model, "_ki1_table", None)
    if cached is not None:
        return cached
    U, *_ = model._normalized()
    table = np.empty_like(U)
    for j in range(model.dim):
        table[:, j] = kernel_integral_1d(model.theta[j], U[:, j], 0.0, 1.0)
    model._ki1_table = table
    return table


def _marginal_pieces(model: GpModel, keep: Tuple[int, ...], grid_n: np.ndarray):
    """Marginalized correlation matrix P (m, n) and basis rows Fg (m, p).

    grid_n holds normalized coordinates of the kept dimensions, shape
    (m, len(keep)). Dimensions not in `keep` are integrated out.
    """
    U, _, F, _, _, _, _ = model._normalized()
    table = _integral_table(model)
    drop = [j for j in range(model.dim) if j not in keep]
    weights = np.prod(table[:, drop], axis=1) if drop else np.ones(model.training.n)

    acc = np.zeros((grid_n.shape[0], model.training.n))
    for col, j in enumerate(keep):
        acc -= model.theta[j] * (grid_n[:, col, None] - U[None, :, j]) ** 2
    P = np.exp(acc, out=acc)
    P *= weights[None, :]

    if model.basis == "constant":
        Fg = np.ones((grid_n.shape[0], 1))
    else:
        Fg = np.full((grid_n.shape[0], model.dim + 1), 0.5)
        Fg[:, 0] = 1.0
        for col, j in enumerate(keep):
            Fg[:, 1 + j] = grid_n[:, col]
    return P, Fg


def _marginal_mean(model: GpModel, keep, grid_n) -> np.ndarray:
    P, Fg = _marginal_pieces(model, keep, grid_n)
    _, _, _, _, beta, gamma, _ = model._normalized()
    return model._y_mean + model._y_std * (Fg @ beta + P @ gamma)


def _marginal_cov(model: GpModel, keep, grid_n) -> Tuple[np.ndarray, float]:
    P, Fg = _marginal_pieces(model, keep, grid_n)
    _, _, F, C, _, _, G = model._normalized()
    drop = [j for j in range(model.dim) if j not in keep]

    term1 = np.ones((grid_n.shape[0], grid_n.shape[0]))
    for col, j in enumerate(keep):
        diff = grid_n[:, col, None] - grid_n[None, :, col]
        term1 *= np.exp(-model.theta[j] * diff**2)
    for j in drop:
        term1 *= kernel_integral_2d(model.theta[j], 0.0, 1.0)

    RinvPT = cho_solve((C, True), P.T)
    term2 = P @ RinvPT
    T = RinvPT.T @ F - Fg
    W = solve_triangular(G.T, T.T, lower=True)
    term3 = W.T @ W

    cov_n = model.sigma_z2 * (term1 - term2 + term3)
    cov_n = 0.5 * (cov_n + cov_n.T)
    cov_n, jitter_n = _psd_repair(cov_n, model.sigma_z2)
    return model._y_std**2 * cov_n, model._y_std**2 * jitter_n


def _psd_repair(cov: np.ndarray, sigma_z2: float) -> Tuple[np.ndarray, float]:
    """Add the minimal diagonal jitter making cov numerically PSD."""
    w_min = float(np.linalg.eigvalsh(cov)[0])
    if w_min >= 0.0:
        return cov, 0.0
    jitter = -w_min * (1.0 + 1e-6)
    if sigma_z2 > 0 and jitter > PSD_JITTER_CAP * sigma_z2:
        raise ConditioningError(
            f"PSD repair jitter {jitter:.3e} exceeds {PSD_JITTER_CAP:g} * sigma_z^2"
        )
    return cov + jitter * np.eye(cov.shape[0]), jitter


def main_effect_mean(model: GpModel, i: int, grid: np.ndarray) -> np.ndarray:
    """Mean of the main-effect GP A_i on `grid` (original units)."""
    _check_dim(model, i)
    grid_n = _normalize_grid(model, i, grid)[:, None]
    return _marginal_mean(model, (i,), grid_n)


def main_effect_cov(model: GpModel, i: int, grid: np.ndarray) -> np.ndarray:
    """Covariance matrix of the main-effect GP A_i on `grid` (original units)."""
    _check_dim(model, i)
    grid_n = _normalize_grid(model, i, grid)[:, None]
    cov, _ = _marginal_cov(model, (i,), grid_n)
    return cov


def main_effect(model: GpModel, i: int, grid: Optional[np.ndarray] = None,
                n_g: int = 128) -> MainEffectGp:
    """Main-effect GP for dimension i, bundled with its PSD-repair jitter."""
    _check_dim(model, i)
    if grid is None:
        grid = uniform_grid(model, i, n_g)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    grid_n = _normalize_grid(model, i, grid)[:, None]
    mean = _marginal_mean(model, (i,), grid_n)
    cov, jitter = _marginal_cov(model, (i,), grid_n)
    return MainEffectGp(dim=i, grid=grid, mean=mean, cov=cov, jitter=jitter)


def interaction_effect(model: GpModel, dims: Iterable[int], grid: np.ndarray) -> InteractionEffectGp:
    """Marginal GP over the dimension subset `dims` on a (m, |dims|) grid."""
    dims = tuple(sorted(set(int(j) for j in dims)))
    if not dims:
        raise InvalidParameterError("dims must be a nonempty subset of {0..d-1}")
    for j in dims:
        _check_dim(model, j)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.shape[1] != len(dims):
        raise InvalidParameterError(f"grid must have {len(dims)} columns")
    grid_n = np.column_stack(
        [_normalize_grid(model, j, grid[:, col]) for col, j in enumerate(dims)]
    )
    mean = _marginal_mean(model, dims, grid_n)
    cov, jitter = _marginal_cov(model, dims, grid_n)
    return InteractionEffectGp(dims=dims, grid=grid, mean=mean, cov=cov, jitter=jitter)
