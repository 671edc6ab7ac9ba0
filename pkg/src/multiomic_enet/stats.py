"""Univariate tests used for screening and signature validation."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats
from scipy.special import expit


def benjamini_hochberg(pvalues, level: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Step-up FDR adjustment.

    ``adjusted_(i) = min_{j >= i} m * p_(j) / j`` in sorted order, capped at 1
    and mapped back to input order.

    Returns
    -------
    mask : bool array, ``adjusted < level``
    adjusted : float array
    """
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1:
        raise ValueError("pvalues must be one-dimensional")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    scaled = m * p[order] / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adj_sorted, 1.0)
    return adjusted < level, adjusted


def mann_whitney(X, y) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise two-sided Mann-Whitney U test of class 0 against class 1.

    Normal approximation with tie and continuity corrections. ``U`` is the
    statistic of the class-0 sample. Columns with all values tied get p = 1.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y)
    a, b = X[y == 0], X[y == 1]
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both classes need at least one row")
    res = stats.mannwhitneyu(a, b, axis=0, method="asymptotic", use_continuity=True)
    p = np.where(np.isnan(res.pvalue), 1.0, res.pvalue)
    tied = np.ptp(X, axis=0) == 0
    p[tied] = 1.0
    return np.asarray(res.statistic, dtype=float), np.clip(p, 0.0, 1.0)


def mann_whitney_exact(a, b) -> tuple[float, float]:
    """Exact two-sided test for small untied samples; returns ``(U_a, p)``."""
    res = stats.mannwhitneyu(a, b, method="exact")
    return float(res.statistic), float(res.pvalue)


def u_distribution(n1: int, n2: int) -> np.ndarray:
    """Counts of ``U = 0 .. n1*n2`` over all ``C(n1+n2, n1)`` untied orderings."""
    # f(n1, n2, u) = f(n1 - 1, n2, u - n2) + f(n1, n2 - 1, u)
    table = {}

    def f(i, j):
        if (i, j) not in table:
            if i == 0 or j == 0:
                out = np.zeros(i * j + 1)
                out[0] = 1
            else:
                out = np.zeros(i * j + 1)
                left = f(i - 1, j)
                out[j:j + left.size] += left
                right = f(i, j - 1)
                out[:right.size] += right
            table[i, j] = out
        return table[i, j]

    return f(n1, n2)


def wald_logistic(C, X, y, max_iter: int = 50, tol: float = 1e-8):
    """Per-column Wald test in the logistic model ``y ~ 1 + C + x_j``.

    All columns are fitted at once by batched Newton-Raphson.

    Parameters
    ----------
    C : (N, q) covariates shared by every model (may have zero columns)
    X : (N, P) candidate columns

    Returns
    -------
    coef, z, p : per-column arrays (NaN where the fit failed)
    ok : bool array, False where Newton did not converge or the fit separates
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, P = X.shape
    C = np.zeros((n, 0)) if C is None else np.asarray(C, dtype=float).reshape(n, -1)
    if C.shape[1] + 2 > n:
        raise ValueError(f"{C.shape[1] + 2} predictors for {n} rows in the screening model")
    base = np.column_stack([np.ones(n), C])
    Z = np.concatenate([np.broadcast_to(base, (P,) + base.shape), X.T[:, :, None]], axis=2)
    q = Z.shape[2]
    beta = np.zeros((P, q))
    ybar = y.mean()
    beta[:, 0] = math.log(ybar / (1 - ybar))
    done = np.zeros(P, dtype=bool)
    ok = np.ones(P, dtype=bool)
    eye = np.eye(q)
    for _ in range(max_iter):
        live = ~done
        if not live.any():
            break
        Zl = Z[live]
        eta = np.einsum("pnq,pq->pn", Zl, beta[live])
        mu = expit(eta)
        w = np.maximum(mu * (1 - mu), 1e-12)
        H = np.einsum("pnq,pn,pnr->pqr", Zl, w, Zl)
        g = np.einsum("pnq,pn->pq", Zl, y - mu)
        try:
            step = np.linalg.solve(H + 1e-12 * eye, g[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(h, gg, rcond=None)[0] for h, gg in zip(H, g)])
        beta[live] += step
        idx = np.flatnonzero(live)
        finished = np.max(np.abs(step), axis=1) < tol * np.maximum(1.0, np.max(np.abs(beta[live]), axis=1))
        done[idx[finished]] = True
    ok &= done
    eta = np.einsum("pnq,pq->pn", Z, beta)
    ok &= ~np.all(np.abs(eta) > 30, axis=1)
    mu = expit(eta)
    w = mu * (1 - mu)
    H = np.einsum("pnq,pn,pnr->pqr", Z, w, Z)
    coef = beta[:, -1].copy()
    se = np.full(P, np.nan)
    for j in np.flatnonzero(ok):
        try:
            cov = np.linalg.inv(H[j])
        except np.linalg.LinAlgError:
            ok[j] = False
            continue
        v = cov[-1, -1]
        if not (v > 0 and np.isfinite(v)):
            ok[j] = False
            continue
        se[j] = math.sqrt(v)
    z = coef / se
    p = 2.0 * stats.norm.sf(np.abs(z))
    coef[~ok] = np.nan
    z[~ok] = np.nan
    p[~ok] = np.nan
    return coef, z, p, ok


def ols_t_test(design, response, index: int) -> tuple[float, float, bool]:
    """OLS fit and two-sided t-test on one coefficient.

    Returns ``(coefficient, p_value, rank_deficient)``; a rank-deficient
    design gives ``(nan, 1.0, True)``.
    """
    A = np.asarray(design, dtype=float)
    r = np.asarray(response, dtype=float)
    n, k = A.shape
    if np.linalg.matrix_rank(A) < k or n <= k:
        return math.nan, 1.0, True
    coef, *_ = np.linalg.lstsq(A, r, rcond=None)
    resid = r - A @ coef
    dof = n - k
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    se = math.sqrt(cov[index, index])
    if se == 0:
        return float(coef[index]), 0.0, False
    t = coef[index] / se
    return float(coef[index]), float(2.0 * stats.t.sf(abs(t), dof)), False
