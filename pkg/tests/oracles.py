"""Independent Monte Carlo oracles used by the tests.

These estimators marginalize the surrogate by brute-force sampling and never
touch the closed-form kernel integrals they are used to check. The batched
covariance oracle collapses batch means with exact linear algebra for speed;
its per-pair semantics are pinned to GpModel.predict_cov_pairs by a
dedicated consistency test.
"""

import numpy as np
from scipy.linalg import cho_solve, solve_triangular


def _complement_products(model, draws_n, i):
    """prod_{j != i} exp(-theta_j (draw_kj - U_lj)^2) for all draws/training rows."""
    U, *_ = model._normalized()
    P = np.ones((draws_n.shape[0], U.shape[0]))
    for j in range(model.dim):
        if j == i:
            continue
        P *= np.exp(-model.theta[j] * (draws_n[:, j, None] - U[None, :, j]) ** 2)
    return P


def _grid_kernel(model, i, grid_n):
    """(n, n_g) kernel values exp(-theta_i (U_li - g)^2)."""
    U, *_ = model._normalized()
    return np.exp(-model.theta[i] * (U[:, i, None] - grid_n[None, :]) ** 2)


def marginal_mean_mc(model, i, grid, n_draws, rng):
    """MC estimate of E[A_i] on `grid` with per-draw predictor values.

    Returns (mean, se, draws_n, values) where values[k, g] is exactly the
    posterior mean at the point whose coordinates are draw k with coordinate
    i replaced by grid[g] (common random numbers across grid points).
    """
    U, _, F, C, beta, gamma, G = model._normalized()
    lo, hi = model.bounds.lower[i], model.bounds.upper[i]
    grid_n = (np.asarray(grid, dtype=float) - lo) / (hi - lo)
    draws_n = rng.random((n_draws, model.dim))
    P = _complement_products(model, draws_n, i)
    E = _grid_kernel(model, i, grid_n)
    vals = (P * gamma[None, :]) @ E
    if model.basis == "linear":
        base = beta[0] + draws_n @ beta[1:] - draws_n[:, i] * beta[1 + i]
        vals += base[:, None] + grid_n[None, :] * beta[1 + i]
    else:
        vals += beta[0]
    vals = model._y_mean + model._y_std * vals
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(n_draws)
    return mean, se, draws_n, vals


def oracle_point(model, draws_n, k, i, grid_value):
    """Original-units point for spot checks: draw k with coordinate i set."""
    x = model.bounds.denormalize(draws_n[k])
    x[i] = grid_value
    return x


def marginal_cov_diag_mc_direct(model, i, grid, n_draws, rng):
    """Direct per-pair covariance oracle (slow, for small cases).

    Var-oracle at grid point g: mean over pairs (u, v) of the posterior
    covariance between (u with x_i = g) and (v with x_i = g).
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    A = model.bounds.denormalize(rng.random((n_draws, model.dim)))
    B = model.bounds.denormalize(rng.random((n_draws, model.dim)))
    mc = np.empty(grid.size)
    se = np.empty(grid.size)
    for gi, g in enumerate(grid):
        Ag = A.copy()
        Bg = B.copy()
        Ag[:, i] = g
        Bg[:, i] = g
        vals = model.predict_cov_pairs(Ag, Bg)
        mc[gi] = vals.mean()
        se[gi] = vals.std(ddof=1) / np.sqrt(n_draws)
    return mc, se


def marginal_cov_diag_mc(model, i, grid, n_draws, rng, n_batches=50):
    """Batched per-pair covariance oracle: same estimator as the direct form,
    with batch means collapsed through exact linear algebra.

    Returns (mc, se) where mc[g] is the mean over n_draws pairs of
    Cov(Y(u, x_i=g), Y(v, x_i=g)) and se is the batch-mean standard error.
    """
    U, _, F, C, _, _, G = model._normalized()
    n, p = F.shape
    theta_i = model.theta[i]
    lo, hi = model.bounds.lower[i], model.bounds.upper[i]
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    grid_n = (grid - lo) / (hi - lo)
    n_g = grid.size

    Udraw = rng.random((n_draws, model.dim))
    Vdraw = rng.random((n_draws, model.dim))
    PU = _complement_products(model, Udraw, i)
    PV = _complement_products(model, Vdraw, i)
    c = np.ones(n_draws)
    for j in range(model.dim):
        if j != i:
            c *= np.exp(-model.theta[j] * (Udraw[:, j] - Vdraw[:, j]) ** 2)

    Rinv = cho_solve((C, True), np.eye(n))
    M1 = F.T @ Rinv                                  # (p, n)
    Hhalf = solve_triangular(G.T, M1, lower=True)    # G^{-T} M1
    M2 = Hhalf.T @ Hhalf                             # M1^T H M1
    H = np.linalg.inv(G.T @ G)                       # (F^T R^{-1} F)^{-1}
    E = _grid_kernel(model, i, grid_n)               # (n, n_g)

    if model.basis == "linear":
        SU = np.hstack([np.ones((n_draws, 1)), Udraw])
        SV = np.hstack([np.ones((n_draws, 1)), Vdraw])
        SU[:, 1 + i] = 0.0
        SV[:, 1 + i] = 0.0
        delta = np.zeros(p)
        delta[1 + i] = 1.0
    else:
        SU = np.ones((n_draws, 1))
        SV = np.ones((n_draws, 1))
        delta = np.zeros(1)
    w = M1.T @ (H @ delta)                           # (n,)
    M1tH = M1.T @ H                                  # (n, p)

    batch_edges = np.linspace(0, n_draws, n_batches + 1).astype(int)
    batch_means = np.empty((n_batches, n_g))
    core = M2 - Rinv
    for b in range(n_batches):
        sl = slice(batch_edges[b], batch_edges[b + 1])
        kb = sl.stop - sl.start
        Gb = PU[sl].T @ PV[sl] / kb
        q1 = np.sum(M1tH * (PU[sl].T @ SV[sl] / kb), axis=1)
        q2 = np.sum(M1tH * (PV[sl].T @ SU[sl] / kb), axis=1)
        pu = PU[sl].mean(axis=0)
        pv = PV[sl].mean(axis=0)
        fHf = np.sum((SU[sl] @ H) * SV[sl], axis=1).mean()
        fHd_u = (SU[sl] @ (H @ delta)).mean()
        fHd_v = (SV[sl] @ (H @ delta)).mean()
        dHd = float(delta @ H @ delta)
        quad = np.einsum("lg,lm,mg->g", E, core * Gb, E)
        lin = E.T @ (q1 + q2)
        lin_g = grid_n * (E.T @ (w * (pu + pv)))
        const = c[sl].mean() + fHf
        const_g = grid_n * (fHd_u + fHd_v) + grid_n**2 * dHd
        batch_means[b] = quad - lin - lin_g + const + const_g
    batch_means *= model.sigma_z2 * model._y_std**2
    mc = batch_means.mean(axis=0)
    se = batch_means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return mc, se


def double_loop_main_variance(func, bounds, i, n_outer, n_inner, rng, n_batches=20):
    """Bias-corrected double-loop MC of Var(E[Y | X_i]) with batch-mean SEs."""
    d = bounds.dim
    outer = rng.uniform(bounds.lower[i], bounds.upper[i], size=n_outer)
    cond_mean = np.empty(n_outer)
    cond_var = np.empty(n_outer)
    for k in range(n_outer):
        pts = rng.uniform(bounds.lower, bounds.upper, size=(n_inner, d))
        pts[:, i] = outer[k]
        vals = func(pts)
        cond_mean[k] = vals.mean()
        cond_var[k] = vals.var(ddof=1)
    estimate = cond_mean.var(ddof=1) - cond_var.mean() / n_inner
    edges = np.linspace(0, n_outer, n_batches + 1).astype(int)
    per_batch = np.array([
        cond_mean[s:e].var(ddof=1) - cond_var[s:e].mean() / n_inner
        for s, e in zip(edges[:-1], edges[1:])
    ])
    se = per_batch.std(ddof=1) / np.sqrt(n_batches)
    return estimate, se
