"""Elastic-net penalised logistic regression.

The solver minimises the mean negative log-likelihood plus a weighted
elastic-net penalty::

    (1/N) sum_i [log(1 + exp(eta_i)) - y_i eta_i]
        + lam * sum_j w_j * (alpha_j |b_j| + (1 - alpha_j) / 2 * b_j^2)

with ``eta = b0 + X b`` and an unpenalised intercept. ``alpha`` may be a scalar
or a per-column vector, which is how per-layer mixing is expressed. Columns
with weight 0 are never penalised.

Each outer iteration builds the usual IRLS quadratic approximation and solves
it by cyclic coordinate descent; a backtracking step keeps the true penalised
objective non-increasing.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from ._cd import irls
from .core import LayerStack, check_response

ALPHA_FLOOR = 1e-3
WEIGHT_FLOOR = 1e-5
KKT_TOL = 1e-6


class SolverError(RuntimeError):
    """The penalised objective became non-finite."""


class SeparationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class EnetConfig:
    """Hyperparameters and budgets for :func:`fit_enet` / :func:`fit_path`.

    ``lam`` is ignored by :func:`fit_path`. ``penalty_weights=None`` means
    1 on penalised columns and 0 on the non-penalised layer.
    """

    alpha: float | np.ndarray = 1.0
    lam: float = 0.0
    penalty_weights: np.ndarray | None = None
    max_outer_iter: int = 100
    max_inner_iter: int = 10_000
    tol: float = 1e-7
    path_length: int = 100
    lambda_min_ratio: float | None = None

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
            raise ValueError("alpha must lie in [0, 1]")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ValueError("lambda must be a nonnegative real")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.penalty_weights is not None:
            w = np.asarray(self.penalty_weights, dtype=float)
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("penalty weights must be finite and >= 0")


@dataclass(frozen=True, eq=False)
class EnetFit:
    intercept: float
    coefficients: np.ndarray
    alpha: float | np.ndarray
    lam: float
    penalty_weights: np.ndarray
    converged: bool
    objective: float
    n_iter: int = 0
    separated: bool = False
    objective_trace: tuple = field(default=(), repr=False)

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients[self.penalty_weights > 0]))

    @property
    def support(self) -> np.ndarray:
        """Indices of nonzero coefficients among penalised columns."""
        return np.flatnonzero((self.coefficients != 0) & (self.penalty_weights > 0))

    def decision_function(self, X) -> np.ndarray:
        X = X.matrix if isinstance(X, LayerStack) else np.asarray(X, dtype=float)
        return self.intercept + X @ self.coefficients

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> dict:
        a = self.alpha
        return {
            "intercept": float(self.intercept),
            "coefficients": {str(j): float(self.coefficients[j])
                             for j in np.flatnonzero(self.coefficients)},
            "n_features": int(self.coefficients.size),
            "alpha": a.tolist() if isinstance(a, np.ndarray) else float(a),
            "lambda": float(self.lam),
            "n_nonzero": self.n_nonzero,
            "converged": bool(self.converged),
            "objective": float(self.objective),
        }

    @classmethod
    def from_dict(cls, d: dict, penalty_weights=None) -> "EnetFit":
        p = int(d["n_features"])
        coef = np.zeros(p)
        for k, v in d["coefficients"].items():
            coef[int(k)] = v
        a = d["alpha"]
        return cls(d["intercept"], coef, np.asarray(a) if isinstance(a, list) else a, d["lambda"],
                   np.ones(p) if penalty_weights is None else np.asarray(penalty_weights, float),
                   d["converged"], d["objective"])


def predict_proba(fit: EnetFit, x) -> float | np.ndarray:
    """Case probability ``1 / (1 + exp(-eta))`` evaluated without overflow."""
    x = np.asarray(x, dtype=float)
    eta = fit.intercept + x @ fit.coefficients
    return expit(eta)


def _as_arrays(stack, y, weights):
    if isinstance(stack, LayerStack):
        X = stack.matrix
        w = stack.default_weights() if weights is None else np.asarray(weights, dtype=float)
    else:
        X = np.asarray(stack, dtype=float)
        w = np.ones(X.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    y = check_response(y, X.shape[0])
    if w.shape != (X.shape[1],):
        raise ValueError("penalty_weights length differs from column count")
    return X, y, w


def _alpha_vec(alpha, p):
    a = np.asarray(alpha, dtype=float)
    return np.full(p, float(a)) if a.ndim == 0 else a.copy()


def penalised_objective(X, y, b0, beta, lam, alpha, weights) -> float:
    eta = b0 + X @ beta
    a = _alpha_vec(alpha, X.shape[1])
    nll = np.mean(np.logaddexp(0.0, eta) - y * eta)
    pen = lam * np.sum(weights * (a * np.abs(beta) + 0.5 * (1 - a) * beta ** 2))
    return float(nll + pen)


def nll_gradient(X, y, b0, beta) -> tuple[float, np.ndarray]:
    """Gradient of the mean negative log-likelihood (intercept, coefficients)."""
    resid = expit(b0 + X @ beta) - y
    return float(resid.mean()), X.T @ resid / X.shape[0]


def kkt_residual(X, y, b0, beta, lam, alpha, weights) -> np.ndarray:
    """Per-coordinate violation of the stationarity conditions.

    Nonzero penalised coordinates report ``|g + lam w (1-a) b + lam w a sign(b)|
    / max(1, lam)``; zero ones report ``max(|g| - lam w a, 0)``; unpenalised
    coordinates report ``|g|``. A solution is optimal when all are ~0.
    """
    g0, g = nll_gradient(X, y, b0, beta)
    a = _alpha_vec(alpha, X.shape[1])
    out = np.empty_like(beta)
    pen = weights > 0
    nz = pen & (beta != 0)
    out[nz] = np.abs(g[nz] + lam * weights[nz] * ((1 - a[nz]) * beta[nz] + a[nz] * np.sign(beta[nz])))
    out[nz] /= max(1.0, lam)
    z = pen & (beta == 0)
    out[z] = np.maximum(np.abs(g[z]) - lam * weights[z] * a[z], 0.0)
    out[~pen] = np.abs(g[~pen])
    return np.append(out, abs(g0))


def _solve(X, y, lam, alpha, weights, b0, beta, cfg: EnetConfig, kkt_tol=0.1 * KKT_TOL):
    """IRLS + coordinate descent from a warm start. Returns an EnetFit."""
    a = _alpha_vec(alpha, X.shape[1])
    l1 = lam * weights * a
    l2 = lam * weights * (1 - a)
    beta = np.array(beta, dtype=float)
    b0, obj, converged, separated, it, trace = irls(
        X, y, float(b0), beta, l1, l2, float(lam), cfg.tol, cfg.max_outer_iter,
        cfg.max_inner_iter, kkt_tol, WEIGHT_FLOOR)
    if not np.isfinite(obj):
        raise SolverError(f"non-finite objective at lambda={lam:g}")
    if not converged and not separated:
        # diverging coefficients: every row classified with vanishing loss
        eta = b0 + X @ beta
        margin = (2 * y - 1) * eta
        separated = bool(np.all(margin > 0) and np.max(np.logaddexp(0, -margin)) < 1e-5)
    if separated:
        warnings.warn("perfect separation: coefficients diverge and every row is fitted exactly",
                      SeparationWarning, stacklevel=3)
    alpha_out = float(a[0]) if np.ndim(alpha) == 0 else a
    return EnetFit(float(b0), beta, alpha_out, float(lam), weights, bool(converged), float(obj),
                   int(it), bool(separated), tuple(trace))


def _null_start(X, y, weights, cfg):
    """Intercept and unpenalised coefficients of the model with all penalised columns at zero."""
    p = X.shape[1]
    beta = np.zeros(p)
    free = weights == 0
    ybar = y.mean()
    b0 = float(np.log(ybar / (1 - ybar)))
    if free.any():
        sub = _solve(X[:, free], y, 0.0, 1.0, np.zeros(int(free.sum())), b0,
                     np.zeros(int(free.sum())), cfg)
        b0 = sub.intercept
        beta[free] = sub.coefficients
    return b0, beta


def _check_classes(y):
    if y.min() == y.max():
        raise ValueError("response needs both classes to fit")


def fit_enet(stack, y, config: EnetConfig, init: EnetFit | None = None) -> EnetFit:
    """Fit at a single ``(lambda, alpha)``.

    Parameters
    ----------
    stack : LayerStack or ndarray of shape (N, P)
        Standardized design.
    y : array of 0/1
    config : EnetConfig
    init : EnetFit, optional
        Warm start.
    """
    X, y, w = _as_arrays(stack, y, config.penalty_weights)
    _check_classes(y)
    X = np.asfortranarray(X)
    if init is None:
        b0, beta = _null_start(X, y, w, config)
    else:
        b0, beta = init.intercept, init.coefficients
    return _solve(X, y, config.lam, config.alpha, w, b0, beta, config)


def lambda_max(stack, y, alpha, weights=None) -> float:
    """Smallest lambda at which every penalised coefficient is zero.

    ``max_j |g_j| / (alpha_j w_j)`` over penalised ``j``, with the gradient taken
    at the null model (intercept and non-penalised columns fitted). Mixing
    values below 1e-3 are floored to 1e-3 here only.
    """
    X, y, w = _as_arrays(stack, y, weights)
    _check_classes(y)
    X = np.asfortranarray(X)
    b0, beta = _null_start(X, y, w, EnetConfig())
    _, g = nll_gradient(X, y, b0, beta)
    a = np.maximum(_alpha_vec(alpha, X.shape[1]), ALPHA_FLOOR)
    pen = w > 0
    if not pen.any():
        return 0.0
    return float(np.max(np.abs(g[pen]) / (a[pen] * w[pen])))


def lambda_grid(lmax: float, n: int, length: int, p: int, min_ratio: float | None = None) -> np.ndarray:
    if min_ratio is None:
        min_ratio = 1e-2 if n < p else 1e-4
    if length == 1:
        return np.array([lmax])
    return lmax * np.geomspace(1.0, min_ratio, length)


def fit_path(stack, y, config: EnetConfig, lambdas=None) -> list[EnetFit | None]:
    """Warm-started fits along a decreasing lambda grid.

    The default grid runs log-spaced from :func:`lambda_max` down to
    ``lambda_max * lambda_min_ratio``. A grid point whose fit raises
    :class:`SolverError` is returned as ``None`` and the path continues from the
    last good fit.
    """
    X, y, w = _as_arrays(stack, y, config.penalty_weights)
    _check_classes(y)
    X = np.asfortranarray(X)
    if lambdas is None:
        lmax = lambda_max(X, y, config.alpha, w)
        lambdas = lambda_grid(lmax, X.shape[0], config.path_length, X.shape[1], config.lambda_min_ratio)
    b0, beta = _null_start(X, y, w, config)
    fits = []
    for lam in lambdas:
        try:
            fit = _solve(X, y, float(lam), config.alpha, w, b0, beta, config)
        except SolverError as exc:
            warnings.warn(str(exc), RuntimeWarning, stacklevel=2)
            fits.append(None)
            continue
        fits.append(fit)
        b0, beta = fit.intercept, fit.coefficients
    return fits


def with_lambda(config: EnetConfig, lam: float) -> EnetConfig:
    return replace(config, lam=float(lam))
