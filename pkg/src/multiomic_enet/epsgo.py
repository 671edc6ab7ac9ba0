"""Gaussian-process global optimisation of a noisy error surface.

The search seeds ``10 * D`` Latin-hypercube points, fits a GP surrogate
(squared-exponential kernel, zero prior mean on centred values) and then
repeatedly evaluates the point of maximal expected improvement, extending the
Cholesky factor of the kernel matrix by one row per new point.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

LENGTH_SCALES = np.geomspace(0.05, 2.0, 8)
SIGNAL_FACTORS = (0.1, 1.0, 10.0)
NOISE_FACTORS = (1e-6, 1e-4, 1e-2)
RETUNE_EVERY = 5
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class EpsgoError(RuntimeError):
    """The search could not proceed (too many failed evaluations)."""


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"dimension {self.name!r}: lower must be < upper")
        if self.scale not in ("linear", "log2"):
            raise ValueError(f"dimension {self.name!r}: unknown scale {self.scale!r}")


@dataclass(frozen=True)
class SearchSpace:
    """Box of hyperparameters. ``log2`` dims are searched on the exponent."""

    dims: tuple[Dim, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if not self.dims:
            raise ValueError("search space needs at least one dimension")

    @property
    def D(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def decode(self, u) -> np.ndarray:
        """Unit-cube point(s) to natural parameter values."""
        u = np.asarray(u, dtype=float)
        lo = np.array([d.lower for d in self.dims])
        hi = np.array([d.upper for d in self.dims])
        v = lo + u * (hi - lo)
        log2 = np.array([d.scale == "log2" for d in self.dims])
        return np.where(log2, np.exp2(v), v)

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.array([d.lower for d in self.dims])
        hi = np.array([d.upper for d in self.dims])
        log2 = np.array([d.scale == "log2" for d in self.dims])
        v = np.where(log2, np.log2(np.where(log2, x, 1.0)), x)
        return (v - lo) / (hi - lo)


@dataclass(frozen=True)
class EpsgoConfig:
    """Budgets for :func:`epsgo_minimize`; ``None`` picks the D-dependent default."""

    init_points: int | None = None
    max_evals: int | None = None
    ei_tol: float | None = None
    patience: int = 10
    seed: int = 0

    def resolved(self, D: int) -> tuple[int, int]:
        init = 10 * D if self.init_points is None else self.init_points
        max_evals = 10 * D + 50 if self.max_evals is None else self.max_evals
        if init < D + 2:
            raise ValueError(f"need at least D + 2 = {D + 2} initial points")
        if max_evals <= init:
            raise ValueError("max_evals must exceed init_points")
        return init, max_evals


def latin_hypercube(D: int, n: int, seed=None) -> np.ndarray:
    """``n`` points in ``[0, 1)^D`` with one point per stratum ``[k/n, (k+1)/n)`` per dim."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((n, D))
    strata = np.column_stack([rng.permutation(n) for _ in range(D)]) if D else np.empty((n, 0))
    pts = (strata + u) / n
    # float rounding can push (k + u) / n onto the next stratum's edge
    return np.minimum(pts, np.nextafter((strata + 1) / n, 0.0))


def _sqdist(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


@dataclass
class GpSurrogate:
    """Exact GP posterior with a cached Cholesky factor of ``K + noise * I``.

    ``offset`` is the constant subtracted from the observations before
    conditioning (their mean at the last hyperparameter tuning).
    """

    train_x: np.ndarray
    train_y: np.ndarray
    signal_var: float
    length_scale: float
    noise_var: float
    offset: float
    chol: np.ndarray
    jitter: float = 0.0
    degenerate: bool = False
    since_tune: int = 0
    _weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._weights is None:
            self._weights = cho_solve((self.chol, True), self.train_y - self.offset)

    def kernel(self, A, B) -> np.ndarray:
        return self.signal_var * np.exp(-0.5 * _sqdist(A, B) / self.length_scale ** 2)

    @property
    def n_points(self) -> int:
        return self.train_y.size

    def predict(self, query) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent-function variance at ``query`` (M x D)."""
        q = np.atleast_2d(np.asarray(query, dtype=float))
        ks = self.kernel(q, self.train_x)
        mean = self.offset + ks @ self._weights
        v = solve_triangular(self.chol, ks.T, lower=True)
        var = self.signal_var - (v * v).sum(0)
        var = np.where(var < 0, np.where(var > -1e-12 * max(self.signal_var, 1e-300), 0.0, var), var)
        return mean, np.maximum(var, 0.0)

    def log_marginal_likelihood(self) -> float:
        r = self.train_y - self.offset
        return float(-0.5 * r @ self._weights - np.log(np.diag(self.chol)).sum()
                     - 0.5 * r.size * math.log(2 * math.pi))


def _factor(X, s2, ell, noise):
    K = s2 * np.exp(-0.5 * _sqdist(X, X) / ell ** 2)
    K[np.diag_indices_from(K)] += noise
    scale = max(s2, noise)
    for j in _JITTERS:
        try:
            L = np.linalg.cholesky(K + j * scale * np.eye(len(K)) if j else K)
            return L, j * scale
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("kernel matrix not positive definite even with 1e-6 jitter")


def _surrogate(X, y, s2, ell, noise, offset, degenerate=False):
    L, jit = _factor(X, s2, ell, noise)
    return GpSurrogate(X.copy(), y.copy(), s2, ell, noise + jit, offset, L, jit, degenerate)


def gp_fit(points, values, *, length_scale=None, signal_var=None, noise_var=None) -> GpSurrogate:
    """Fit the surrogate, tuning hyperparameters on a fixed grid.

    Length-scale, signal variance and noise variance are picked by maximal
    log marginal likelihood over 8 x 3 x 3 candidates; any of them can be
    pinned by keyword. Values are centred by their mean.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(values, dtype=float)
    if X.shape[0] != y.size or y.size < 2:
        raise ValueError("need at least two (point, value) pairs")
    if not np.all(np.isfinite(y)):
        raise ValueError("values must be finite")
    offset = float(y.mean())
    vy = float(y.var())
    if vy <= 1e-300:
        # constant surface: zero signal variance, mean equal to the constant
        ell = 1.0 if length_scale is None else length_scale
        return _surrogate(X, y, 0.0, ell, 1e-12 if noise_var is None else noise_var, offset, True)
    ells = LENGTH_SCALES if length_scale is None else [length_scale]
    s2s = [f * vy for f in SIGNAL_FACTORS] if signal_var is None else [signal_var]
    noises = [f * vy for f in NOISE_FACTORS] if noise_var is None else [noise_var]
    best, best_lml = None, -np.inf
    for ell in ells:
        for s2 in s2s:
            for nv in noises:
                try:
                    gp = _surrogate(X, y, s2, ell, nv, offset)
                except np.linalg.LinAlgError:
                    continue
                lml = gp.log_marginal_likelihood()
                if lml > best_lml:
                    best, best_lml = gp, lml
    if best is None:
        raise np.linalg.LinAlgError("no hyperparameter candidate gave a positive-definite kernel")
    return best


def gp_update(gp: GpSurrogate, new_point, new_value, *, retune: bool = True) -> GpSurrogate:
    """Condition on one more observation by extending the Cholesky factor.

    Hyperparameters stay fixed, so the posterior equals a batch refit with
    the same hyperparameters and offset. Every fifth addition (when
    ``retune``) the hyperparameters are re-tuned by :func:`gp_fit`.
    """
    x = np.asarray(new_point, dtype=float).reshape(1, -1)
    X = np.vstack([gp.train_x, x])
    y = np.append(gp.train_y, float(new_value))
    if retune and gp.since_tune + 1 >= RETUNE_EVERY:
        return gp_fit(X, y)
    if gp.degenerate and new_value != gp.offset and retune:
        return gp_fit(X, y)
    k = gp.kernel(gp.train_x, x)[:, 0]
    ell = solve_triangular(gp.chol, k, lower=True)
    d2 = gp.signal_var + gp.noise_var - ell @ ell
    if d2 <= 1e-14 * max(gp.signal_var + gp.noise_var, 1e-300):
        L, jit = _factor(X, gp.signal_var, gp.length_scale, gp.noise_var - gp.jitter)
        out = GpSurrogate(X, y, gp.signal_var, gp.length_scale, gp.noise_var - gp.jitter + jit,
                          gp.offset, L, jit, gp.degenerate)
    else:
        m = gp.chol.shape[0]
        L = np.zeros((m + 1, m + 1))
        L[:m, :m] = gp.chol
        L[m, :m] = ell
        L[m, m] = math.sqrt(d2)
        out = GpSurrogate(X, y, gp.signal_var, gp.length_scale, gp.noise_var, gp.offset, L,
                          gp.jitter, gp.degenerate)
    out.since_tune = gp.since_tune + 1
    return out


def ei_from_moments(mu, sigma, q_min) -> np.ndarray:
    """``E[max(q_min - Y, 0)]`` for ``Y ~ N(mu, sigma^2)``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gain = q_min - mu
    safe = np.where(sigma < 1e-12, 1.0, sigma)
    z = gain / safe
    ei = gain * ndtr(z) + safe * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return np.where(sigma < 1e-12, np.maximum(gain, 0.0), np.maximum(ei, 0.0))


def expected_improvement(gp: GpSurrogate, query, q_min: float) -> np.ndarray:
    mu, var = gp.predict(query)
    return ei_from_moments(mu, np.sqrt(var), q_min)


@dataclass(frozen=True)
class Proposal:
    point: np.ndarray
    ei: float
    exploration: bool = False


def _coordinate_search(f, x0, steps=100, h0=0.1):
    x, fx, h = x0.copy(), f(x0[None, :])[0], h0
    D = x.size
    for _ in range(steps):
        trial = np.repeat(x[None, :], 2 * D, axis=0)
        for d in range(D):
            trial[2 * d, d] += h
            trial[2 * d + 1, d] -= h
        np.clip(trial, 0.0, 1.0, out=trial)
        vals = f(trial)
        k = int(np.argmax(vals))
        if vals[k] > fx:
            x, fx = trial[k], vals[k]
        else:
            h *= 0.5
            if h < 1e-7:
                break
    return x, fx


def propose_next(gp: GpSurrogate, space: SearchSpace | int, seed=None, q_min: float | None = None,
                 n_candidates: int = 512, n_refine: int = 8, steps: int = 100) -> Proposal:
    """Maximise expected improvement by multi-start local search.

    512 LHS candidates are scored and the best 8 refined by adaptive
    coordinate search. When EI is zero everywhere the candidate farthest from
    the training points is returned with ``exploration=True``.
    """
    D = space if isinstance(space, int) else space.D
    if q_min is None:
        q_min = float(gp.train_y.min())
    cand = latin_hypercube(D, n_candidates, seed)
    ei = expected_improvement(gp, cand, q_min)
    if not np.any(ei > 0):
        dist = np.sqrt(_sqdist(cand, gp.train_x)).min(axis=1)
        k = int(np.argmax(dist))
        return Proposal(cand[k], 0.0, True)
    f = lambda q: expected_improvement(gp, q, q_min)
    best_x, best_v = None, -np.inf
    for k in np.argsort(-ei, kind="stable")[:n_refine]:
        x, v = _coordinate_search(f, cand[k], steps)
        if v > best_v:
            best_x, best_v = x, v
    return Proposal(best_x, float(best_v), False)


@dataclass(frozen=True)
class EvalRecord:
    index: int
    unit_point: tuple
    point: tuple
    value: float
    ei: float
    elapsed_ms: float
    phase: str
    error: str = ""


@dataclass(frozen=True, eq=False)
class EpsgoResult:
    best_point: np.ndarray
    best_value: float
    history: list
    stop_reason: str
    space: SearchSpace
    flat: bool = False
    n_failures: int = 0

    def best_params(self) -> dict:
        return dict(zip(self.space.names, map(float, self.best_point)))

    def to_dict(self) -> dict:
        return {
            "best_point": self.best_params(),
            "best_value": self.best_value,
            "stop_reason": self.stop_reason,
            "flat": self.flat,
            "n_failures": self.n_failures,
            "history": [{"index": r.index, "point": dict(zip(self.space.names, r.point)),
                         "value": None if not np.isfinite(r.value) else r.value,
                         "ei": None if np.isnan(r.ei) else r.ei, "phase": r.phase,
                         "error": r.error} for r in self.history],
        }

    def write_history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eval_index", *self.space.names, "value", "ei", "elapsed_ms"])
            for r in self.history:
                w.writerow([r.index, *("%.17g" % v for v in r.point), "%.17g" % r.value,
                            "%.17g" % r.ei, "%.3f" % r.elapsed_ms])


def epsgo_minimize(objective: Callable[[np.ndarray], float], space: SearchSpace,
                   config: EpsgoConfig = EpsgoConfig()) -> EpsgoResult:
    """Minimise ``objective`` (natural-unit point -> value) over ``space``.

    Stops when the best expected improvement drops below ``ei_tol``, after
    ``patience`` consecutive evaluations without a new minimum, or at
    ``max_evals``. Evaluations that raise or return a non-finite value are
    recorded as ``+inf`` and excluded from the surrogate; more than half of
    the evaluations failing aborts the search with :class:`EpsgoError`.
    """
    D = space.D
    n_init, max_evals = config.resolved(D)
    seeds = np.random.SeedSequence(config.seed)
    init_seed, prop_seed = seeds.spawn(2)
    history: list[EvalRecord] = []
    good_x, good_y = [], []

    def evaluate(u, ei, phase):
        x = space.decode(u)
        t0 = time.perf_counter()
        err = ""
        try:
            v = float(objective(x))
            if not np.isfinite(v):
                err, v = "non-finite value", math.inf
        except Exception as exc:  # objective failures are data, not control flow
            err, v = f"{type(exc).__name__}: {exc}", math.inf
        history.append(EvalRecord(len(history), tuple(map(float, u)), tuple(map(float, x)), v,
                                  ei, 1e3 * (time.perf_counter() - t0), phase, err))
        if np.isfinite(v):
            good_x.append(np.asarray(u, dtype=float))
            good_y.append(v)
        return v

    def check_failures():
        fails = sum(1 for r in history if not np.isfinite(r.value))
        if fails > 0.5 * len(history):
            msgs = sorted({r.error for r in history if r.error})
            raise EpsgoError(f"{fails} of {len(history)} evaluations failed: " + "; ".join(msgs[:3]))
        return fails

    for u in latin_hypercube(D, n_init, init_seed):
        evaluate(u, math.nan, "init")
    check_failures()
    if len(good_y) < 2:
        raise EpsgoError("fewer than two successful initial evaluations")
    gp = gp_fit(np.array(good_x), np.array(good_y))
    q_min = min(good_y)
    stale = 0
    stop = "max_evals"
    step_seeds = prop_seed.spawn(max_evals)
    while len(history) < max_evals:
        prop = propose_next(gp, space, step_seeds[len(history)], q_min)
        tol = config.ei_tol if config.ei_tol is not None else 1e-4 * abs(q_min) + 1e-6
        if not prop.exploration and prop.ei < tol:
            stop = "ei_tol"
            break
        v = evaluate(prop.point, prop.ei, "explore" if prop.exploration else "ei")
        check_failures()
        if np.isfinite(v):
            gp = gp_update(gp, prop.point, v)
        if v < q_min - 1e-12:
            q_min, stale = v, 0
        else:
            stale += 1
        if stale >= config.patience:
            stop = "patience"
            break
    k = int(np.argmin(good_y))
    best_u = good_x[k]
    fails = sum(1 for r in history if not np.isfinite(r.value))
    flat = bool(np.ptp(good_y) == 0)
    return EpsgoResult(space.decode(best_u), float(good_y[k]), history, stop, space, flat, fails)
