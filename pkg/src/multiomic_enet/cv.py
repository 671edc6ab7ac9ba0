"""K-fold cross-validation of lambda and repeated-CV variable selection."""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .core import FoldDegenerateError, LayerStack
from .enet import EnetConfig, EnetFit, SolverError, _as_arrays, fit_path, lambda_grid, lambda_max


class CvError(RuntimeError):
    """Too many folds failed to produce a usable path."""


def make_folds(y, n_folds: int, seed) -> np.ndarray:
    """Stratified fold ids in ``[0, n_folds)``.

    Rows of each class are shuffled and dealt round-robin, continuing the
    deal across classes so fold sizes also stay within one of each other.
    """
    y = np.asarray(y)
    n = y.size
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if n_folds > n:
        raise ValueError(f"{n_folds} folds requested for {n} rows")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    offset = 0
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (offset + np.arange(idx.size)) % n_folds
        offset = (offset + idx.size) % n_folds
    return folds


def misclassification_rate(model, stack, y=None) -> float:
    """Fraction of rows where ``(probability >= 0.5) != label``.

    ``model`` is an :class:`EnetFit` (scored on ``stack``) or an array of
    probabilities, in which case ``stack`` holds the labels and ``y`` is unused.
    """
    if isinstance(model, EnetFit):
        prob = model.predict_proba(stack)
        labels = np.asarray(y, dtype=float)
    else:
        prob = np.asarray(model, dtype=float)
        labels = np.asarray(stack if y is None else y, dtype=float)
    if prob.size == 0:
        raise ValueError("cannot score an empty set of rows")
    if prob.shape != labels.shape:
        raise ValueError("probabilities and labels differ in length")
    return float(np.mean((prob >= 0.5) != (labels == 1)))


@dataclass(frozen=True, eq=False)
class CvResult:
    lambda_grid: np.ndarray
    mr_per_fold: np.ndarray
    mean_mr: np.ndarray
    chosen_index: int
    chosen_fit: EnetFit | None
    fold_assignment: np.ndarray
    oof_proba: np.ndarray
    alpha: float | np.ndarray
    dropped_folds: tuple = ()

    @property
    def chosen_lambda(self) -> float:
        return float(self.lambda_grid[self.chosen_index])

    @property
    def min_mr(self) -> float:
        return float(self.mean_mr[self.chosen_index])

    @property
    def selected_set(self) -> tuple[int, ...]:
        if self.chosen_fit is None:
            return ()
        return tuple(int(j) for j in self.chosen_fit.support)

    def to_dict(self) -> dict:
        a = self.alpha
        return {
            "alpha": a.tolist() if isinstance(a, np.ndarray) else float(a),
            "lambda_grid": self.lambda_grid.tolist(),
            "mr_per_fold": [[None if np.isnan(v) else float(v) for v in row] for row in self.mr_per_fold],
            "mean_mr": self.mean_mr.tolist(),
            "chosen_lambda": self.chosen_lambda,
            "selected_set": list(self.selected_set),
            "fold_assignment": self.fold_assignment.tolist(),
            "dropped_folds": list(self.dropped_folds),
            "chosen_fit": None if self.chosen_fit is None else self.chosen_fit.to_dict(),
        }


def _argmin_first(v: np.ndarray) -> int:
    best = np.nanmin(v)
    return int(np.flatnonzero(v <= best + 1e-12)[0])


def cv_lambda(stack, y, alpha, weights=None, n_folds: int = 10, seed=0, *,
              config: EnetConfig | None = None, folds=None, lambdas=None,
              refit: bool = True, full_path=None) -> CvResult:
    """Choose lambda by K-fold CV misclassification rate.

    The lambda grid is computed once on the full data and shared by all
    folds. The chosen lambda minimises the mean out-of-fold MR; ties go to
    the larger lambda. With ``refit`` the model is refit on all rows along
    the same warm-started grid, stopping at the chosen point.

    Parameters
    ----------
    stack : LayerStack or ndarray
    y : array of 0/1
    alpha : float or per-column array
    weights : per-column penalty weights, optional
    n_folds, seed : fold count and fold RNG seed (ignored when ``folds`` given)
    config : EnetConfig, optional
        Solver budgets; its ``alpha`` and weights are overridden.
    full_path : list of EnetFit, optional
        Precomputed full-data path on the same grid (used by repeated CV).
    """
    X, y, w = _as_arrays(stack, y, weights)
    X = np.asfortranarray(X)
    cfg = replace(config or EnetConfig(), alpha=alpha, penalty_weights=w)
    n = X.shape[0]
    if lambdas is None:
        lmax = lambda_max(X, y, alpha, w)
        lambdas = lambda_grid(lmax, n, cfg.path_length, X.shape[1], cfg.lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    if folds is None:
        folds = make_folds(y, n_folds, seed)
    folds = np.asarray(folds, dtype=int)
    k = int(folds.max()) + 1
    mr = np.full((k, lambdas.size), np.nan)
    oof = np.full((n, lambdas.size), np.nan)
    dropped = []
    for f in range(k):
        test = folds == f
        ytr = y[~test]
        try:
            if ytr.min() == ytr.max():
                raise FoldDegenerateError(f"fold {f}: training part lacks a class")
            path = fit_path(X[~test], ytr, cfg, lambdas)
        except (FoldDegenerateError, SolverError, ValueError) as exc:
            dropped.append(f)
            warnings.warn(f"dropping CV fold {f}: {exc}", RuntimeWarning, stacklevel=2)
            continue
        Xte, yte = X[test], y[test]
        for i, fit in enumerate(path):
            if fit is None:
                continue
            prob = fit.predict_proba(Xte)
            oof[test, i] = prob
            mr[f, i] = np.mean((prob >= 0.5) != (yte == 1))
    if len(dropped) > 1:
        raise CvError(f"{len(dropped)} of {k} CV folds failed: {dropped}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_mr = np.nanmean(mr, axis=0)
    if np.all(np.isnan(mean_mr)):
        raise CvError("no lambda produced a usable fit in any fold")
    idx = _argmin_first(mean_mr)
    chosen = None
    if full_path is not None:
        chosen = full_path[idx]
    elif refit:
        chosen = fit_path(X, y, cfg, lambdas[:idx + 1])[-1]
    return CvResult(lambdas, mr, mean_mr, idx, chosen, folds, oof[:, idx], alpha, tuple(dropped))


@dataclass(frozen=True, eq=False)
class RepeatedSelection:
    repeats: int
    per_repeat_sets: list
    maximal_set: tuple
    modal_set: tuple
    modal_count: int
    frequency: dict = field(default_factory=dict)
    chosen_lambdas: tuple = ()

    def to_dict(self) -> dict:
        return {
            "repeats": self.repeats,
            "per_repeat_sets": [list(s) for s in self.per_repeat_sets],
            "maximal_set": list(self.maximal_set),
            "modal_set": list(self.modal_set),
            "modal_count": self.modal_count,
            "frequency": {str(k): v for k, v in sorted(self.frequency.items())},
            "chosen_lambdas": list(self.chosen_lambdas),
        }

    def frequency_rows(self, stack: LayerStack):
        """``(column_name, layer, count)`` rows for CSV export."""
        return [(stack.column_names[j], stack.layer_of(j).name, c)
                for j, c in sorted(self.frequency.items())]


def summarize_sets(sets) -> tuple[tuple, tuple, int, dict]:
    """Maximal set, modal set (with its count) and per-column frequency."""
    sets = [tuple(sorted(s)) for s in sets]
    maximal = max(sets, key=len)  # max returns the first of equal-length sets
    counts = Counter(sets)
    first_seen = {}
    for i, s in enumerate(sets):
        first_seen.setdefault(s, i)
    modal = min(counts, key=lambda s: (-counts[s], len(s), first_seen[s]))
    freq = Counter(j for s in sets for j in s)
    return maximal, modal, counts[modal], dict(freq)


def repeated_cv_selection(stack, y, alpha, weights=None, n_folds: int = 10, repeats: int = 1,
                          seed=0, *, config: EnetConfig | None = None) -> RepeatedSelection:
    """Repeat :func:`cv_lambda` over independent fold draws.

    The full-data path is shared by all repeats since only the folds change.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X, y, w = _as_arrays(stack, y, weights)
    X = np.asfortranarray(X)
    cfg = replace(config or EnetConfig(), alpha=alpha, penalty_weights=w)
    lmax = lambda_max(X, y, alpha, w)
    lambdas = lambda_grid(lmax, X.shape[0], cfg.path_length, X.shape[1], cfg.lambda_min_ratio)
    full = fit_path(X, y, cfg, lambdas)
    seeds = np.random.SeedSequence(seed).spawn(repeats)
    sets, lams = [], []
    for s in seeds:
        res = cv_lambda(X, y, alpha, w, n_folds, s, config=cfg, lambdas=lambdas, full_path=full)
        sets.append(res.selected_set)
        lams.append(res.chosen_lambda)
    maximal, modal, count, freq = summarize_sets(sets)
    return RepeatedSelection(repeats, sets, maximal, modal, count, freq, tuple(lams))
