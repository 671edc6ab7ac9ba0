"""Multi-layer integration strategies and univariate baselines.

Every runner takes a standardized :class:`LayerStack` and a 0/1 response and
returns a :class:`MethodResult` holding a predictive model over all columns
plus the per-layer selected sets.

* ``naive_en``: one elastic net over all layers, alpha tuned by EPSGO.
* ``sipf_en``: one alpha, per-layer penalty ratios ``lambda_m / lambda_1``.
* ``ipf_en``: per-layer alpha and per-layer penalty ratios.
* ``two_step_fixed`` / ``two_step_epsgo``: per-layer EN selection (fixed or
  tuned alpha) followed by a ridge model on the pooled selection.
* ``univariate_wald`` / ``univariate_mw``: per-variable screens followed by
  the same ridge step.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LayerStack, check_response
from .cv import CvError, cv_lambda, make_folds, repeated_cv_selection
from .enet import EnetConfig, EnetFit, SolverError
from .epsgo import Dim, EpsgoConfig, EpsgoError, SearchSpace, epsgo_minimize
from .stats import benjamini_hochberg, mann_whitney, wald_logistic

KINDS = ("naive_en", "sipf_en", "ipf_en", "two_step_fixed", "two_step_epsgo",
         "univariate_wald", "univariate_mw")
ALPHA_BOUNDS = (0.01, 1.0)
LOG2_RATIO_BOUNDS = (-3.0, 3.0)
DEFAULT_TWO_STEP_ALPHA = 0.1


class MethodError(RuntimeError):
    """A method could not produce a model."""


@dataclass(frozen=True)
class MethodSpec:
    """What to run and with which budgets.

    ``repeats > 1`` replaces each per-layer selection of the two-step
    methods by the maximal set over repeated CV; the other methods accept
    only ``repeats == 1``.
    """

    kind: str
    alpha_fixed: float | None = None
    cv_folds: int = 10
    repeats: int = 1
    epsgo: EpsgoConfig = EpsgoConfig()
    seed: int = 0
    include_clinical: bool = True
    enet: EnetConfig = EnetConfig()
    level: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind == "two_step_fixed":
            if self.alpha_fixed is None:
                object.__setattr__(self, "alpha_fixed", DEFAULT_TWO_STEP_ALPHA)
            if not 0.0 <= self.alpha_fixed <= 1.0:
                raise ValueError("alpha_fixed must lie in [0, 1]")
        elif self.alpha_fixed is not None:
            raise ValueError("alpha_fixed applies only to two_step_fixed")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.repeats > 1 and not self.kind.startswith("two_step"):
            raise ValueError("repeats > 1 is only supported by the two-step methods")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "alpha_fixed": self.alpha_fixed, "cv_folds": self.cv_folds,
            "repeats": self.repeats, "seed": self.seed, "include_clinical": self.include_clinical,
            "level": self.level,
            "epsgo": {"init_points": self.epsgo.init_points, "max_evals": self.epsgo.max_evals,
                      "ei_tol": self.epsgo.ei_tol, "patience": self.epsgo.patience},
            "enet": {"tol": self.enet.tol, "path_length": self.enet.path_length,
                     "max_outer_iter": self.enet.max_outer_iter,
                     "lambda_min_ratio": self.enet.lambda_min_ratio},
        }


@dataclass(frozen=True, eq=False)
class MethodResult:
    kind: str
    final_model: EnetFit
    per_layer_selected: dict
    hyperparams: dict
    diagnostics: dict = field(default_factory=dict, repr=False)
    flags: tuple = ()
    selection_frequency: dict = field(default_factory=dict, repr=False)

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(sorted(j for s in self.per_layer_selected.values() for j in s))

    def predict_proba(self, stack) -> np.ndarray:
        return self.final_model.predict_proba(stack)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "per_layer_selected": {k: list(v) for k, v in self.per_layer_selected.items()},
            "hyperparams": self.hyperparams,
            "flags": list(self.flags),
            "final_model": self.final_model.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def selection_rows(self, stack: LayerStack):
        """``(layer, column_name, coefficient, frequency)`` for each selected column."""
        rows = []
        for layer, cols in self.per_layer_selected.items():
            for j in cols:
                rows.append((layer, stack.column_names[j], float(self.final_model.coefficients[j]),
                             self.selection_frequency.get(j, 1)))
        return rows

    def write_selection_csv(self, path, stack: LayerStack) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", "column_name", "coefficient_in_final_model", "selection_frequency"])
            for layer, name, coef, freq in self.selection_rows(stack):
                w.writerow([layer, name, "%.17g" % coef, freq])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def layer_weights(stack: LayerStack, ratios=None) -> np.ndarray:
    """Penalty weights: 0 on the clinical block, ``ratios[m]`` on penalised layer ``m``.

    ``ratios`` maps layer name to ``lambda_m / lambda_1``; missing layers get 1.
    """
    w = np.zeros(stack.n_cols)
    for layer in stack.penalised_layers:
        w[layer.columns] = 1.0 if ratios is None else ratios.get(layer.name, 1.0)
    return w


def layer_alphas(stack: LayerStack, alphas) -> np.ndarray:
    """Per-column mixing vector from a per-layer mapping (clinical columns get 1)."""
    a = np.ones(stack.n_cols)
    for layer in stack.penalised_layers:
        a[layer.columns] = alphas[layer.name]
    return a


def _cv_error(stack, y, alpha, weights, folds, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = cv_lambda(stack, y, alpha, weights, config=cfg, folds=folds, refit=False)
    return res.min_mr


def _require_layers(stack, k):
    if len(stack.penalised_layers) < k:
        raise ValueError(f"method needs at least {k} penalised layers")


def _selected_by_layer(stack, support):
    support = set(int(j) for j in support)
    return {layer.name: tuple(j for j in layer.columns if j in support)
            for layer in stack.penalised_layers}


def _epsgo(objective, space, spec, seed):
    cfg = replace(spec.epsgo, seed=seed)
    return epsgo_minimize(objective, space, cfg)


def _epsgo_diag(res) -> dict:
    return {"stop_reason": res.stop_reason, "n_evals": len(res.history), "flat": res.flat,
            "n_failures": res.n_failures, "best_value": res.best_value,
            "history": [{"point": list(r.point), "value": r.value, "ei": r.ei, "phase": r.phase}
                        for r in res.history]}


def _tuned_en(stack, y, spec, space, build):
    """EPSGO over ``space`` where ``build(point) -> (alpha, weights)``; then refit."""
    fold_seed, search_seed = _seeds(spec.seed, 2)
    folds = make_folds(y, spec.cv_folds, fold_seed)

    def objective(point):
        a, w = build(point)
        return _cv_error(stack, y, a, w, folds, spec.enet)

    res = _epsgo(objective, space, spec, search_seed)
    alpha, w = build(res.best_point)
    cv = cv_lambda(stack, y, alpha, w, config=spec.enet, folds=folds)
    if cv.chosen_fit is None:
        raise MethodError("refit at the chosen hyperparameters failed")
    flags = ("flat_surface",) if res.flat else ()
    diag = {"epsgo": _epsgo_diag(res), "cv_mean_mr": cv.mean_mr.tolist(),
            "chosen_lambda": cv.chosen_lambda}
    return res, cv, flags, diag


def run_naive_en(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    y = check_response(y, stack.n_rows)
    w = layer_weights(stack)
    space = SearchSpace((Dim("alpha", *ALPHA_BOUNDS),))
    res, cv, flags, diag = _tuned_en(stack, y, spec, space, lambda x: (float(x[0]), w))
    hp = {"alpha": float(res.best_point[0]), "lambda": cv.chosen_lambda}
    return MethodResult("naive_en", cv.chosen_fit, _selected_by_layer(stack, cv.selected_set),
                        hp, diag, flags)


def _ratio_dims(stack):
    return tuple(Dim(f"ratio:{layer.name}", *LOG2_RATIO_BOUNDS, scale="log2")
                 for layer in stack.penalised_layers[1:])


def run_sipf_en(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    y = check_response(y, stack.n_rows)
    _require_layers(stack, 2)
    names = [layer.name for layer in stack.penalised_layers]
    space = SearchSpace((Dim("alpha", *ALPHA_BOUNDS),) + _ratio_dims(stack))

    def build(x):
        ratios = dict(zip(names[1:], map(float, x[1:])))
        return float(x[0]), layer_weights(stack, ratios)

    res, cv, flags, diag = _tuned_en(stack, y, spec, space, build)
    x = res.best_point
    hp = {"alpha": float(x[0]), "ratios": {names[0]: 1.0, **dict(zip(names[1:], map(float, x[1:])))},
          "lambda1": cv.chosen_lambda}
    return MethodResult("sipf_en", cv.chosen_fit, _selected_by_layer(stack, cv.selected_set),
                        hp, diag, flags)


def run_ipf_en(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    y = check_response(y, stack.n_rows)
    _require_layers(stack, 2)
    names = [layer.name for layer in stack.penalised_layers]
    M = len(names)
    space = SearchSpace(tuple(Dim(f"alpha:{n}", *ALPHA_BOUNDS) for n in names) + _ratio_dims(stack))

    def build(x):
        alphas = dict(zip(names, map(float, x[:M])))
        ratios = dict(zip(names[1:], map(float, x[M:])))
        return layer_alphas(stack, alphas), layer_weights(stack, ratios)

    res, cv, flags, diag = _tuned_en(stack, y, spec, space, build)
    x = res.best_point
    hp = {"alpha": dict(zip(names, map(float, x[:M]))),
          "ratios": {names[0]: 1.0, **dict(zip(names[1:], map(float, x[M:])))},
          "lambda1": cv.chosen_lambda}
    return MethodResult("ipf_en", cv.chosen_fit, _selected_by_layer(stack, cv.selected_set),
                        hp, diag, flags)


def _constant_model(stack, y, free_cols, cfg):
    """Unpenalised logistic fit on ``free_cols`` (possibly none), full-P coordinates."""
    p = stack.n_cols
    coef = np.zeros(p)
    ybar = float(np.mean(y))
    b0 = math.log(ybar / (1 - ybar))
    obj = -(ybar * math.log(ybar) + (1 - ybar) * math.log(1 - ybar))
    converged = True
    if free_cols:
        from .enet import fit_enet
        sub = stack.matrix[:, free_cols]
        fit = fit_enet(sub, y, replace(cfg, alpha=0.0, lam=0.0, penalty_weights=np.zeros(len(free_cols))))
        b0, obj, converged = fit.intercept, fit.objective, fit.converged
        coef[free_cols] = fit.coefficients
    return EnetFit(b0, coef, 0.0, 0.0, np.zeros(p), converged, obj)


def ridge_on_selection(stack: LayerStack, y, selected, spec: MethodSpec, seed) -> tuple[EnetFit, dict, tuple]:
    """CV'd ridge on the clinical block plus ``selected`` columns, embedded in all P columns."""
    clinical = list(stack.unpenalised_columns)
    sel = sorted(int(j) for j in selected)
    flags = ()
    if not sel:
        flags = ("no_selection",)
        return _constant_model(stack, y, clinical, spec.enet), {"ridge_lambda": 0.0}, flags
    cols = clinical + sel
    sub = stack.matrix[:, cols]
    w = np.r_[np.zeros(len(clinical)), np.ones(len(sel))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cv = cv_lambda(sub, y, 0.0, w, n_folds=spec.cv_folds, seed=seed, config=spec.enet)
    fit = cv.chosen_fit
    if fit is None:
        raise MethodError("ridge refit failed")
    coef = np.zeros(stack.n_cols)
    coef[cols] = fit.coefficients
    weights = np.zeros(stack.n_cols)
    weights[cols] = w
    full = EnetFit(fit.intercept, coef, 0.0, fit.lam, weights, fit.converged, fit.objective,
                   fit.n_iter, fit.separated)
    return full, {"ridge_lambda": cv.chosen_lambda}, flags


def _layer_stack(stack, layer, include_clinical):
    names = [layer.name]
    if include_clinical and stack.clinical is not None:
        names = [stack.clinical.name, layer.name]
    return stack.take_layers(names)


def _layer_selection(sub, y, alpha, spec, seed):
    """Selected columns (in ``sub`` coordinates) and frequencies for one layer."""
    weights = sub.default_weights()
    if spec.repeats > 1:
        rs = repeated_cv_selection(sub, y, alpha, weights, spec.cv_folds, spec.repeats, seed,
                                   config=spec.enet)
        return rs.maximal_set, rs.frequency, {"modal_set": list(rs.modal_set),
                                              "modal_count": rs.modal_count}
    cv = cv_lambda(sub, y, alpha, weights, spec.cv_folds, seed, config=spec.enet)
    sel = cv.selected_set
    return sel, {j: 1 for j in sel}, {"chosen_lambda": cv.chosen_lambda}


def _two_step(stack, y, spec, tune: bool) -> MethodResult:
    y = check_response(y, stack.n_rows)
    layers = stack.penalised_layers
    if not layers:
        raise ValueError("two-step methods need at least one penalised layer")
    seeds = _seeds(spec.seed, len(layers) + 1)
    selected, freq, alphas, flags, diag = {}, {}, {}, [], {}
    for layer, seed in zip(layers, seeds):
        sub = _layer_stack(stack, layer, spec.include_clinical)
        offset = layer.start - sub.layer(layer.name).start
        fold_seed, search_seed, sel_seed = _seeds(seed, 3)
        d = {}
        if tune:
            folds = make_folds(y, spec.cv_folds, fold_seed)
            w = sub.default_weights()
            try:
                res = _epsgo(lambda x: _cv_error(sub, y, float(x[0]), w, folds, spec.enet),
                             SearchSpace((Dim("alpha", *ALPHA_BOUNDS),)), spec, search_seed)
            except EpsgoError as exc:
                flags.append(f"epsgo_failed:{layer.name}")
                diag[layer.name] = {"error": str(exc)}
                continue
            alpha = float(res.best_point[0])
            if res.flat:
                flags.append(f"flat_surface:{layer.name}")
            d["epsgo"] = _epsgo_diag(res)
        else:
            alpha = spec.alpha_fixed
        try:
            sel, fr, extra = _layer_selection(sub, y, alpha, spec, sel_seed)
        except (CvError, SolverError, ValueError) as exc:
            flags.append(f"selection_failed:{layer.name}")
            diag[layer.name] = {**d, "error": str(exc)}
            continue
        in_layer = sub.layer(layer.name)
        cols = tuple(j + offset for j in sel if in_layer.start <= j < in_layer.stop)
        selected[layer.name] = cols
        freq.update({j + offset: c for j, c in fr.items() if in_layer.start <= j < in_layer.stop})
        alphas[layer.name] = alpha
        diag[layer.name] = {**d, **extra}
    if not selected and tune:
        raise MethodError("selection failed in every layer")
    all_sel = [j for s in selected.values() for j in s]
    model, hp, f2 = ridge_on_selection(stack, y, all_sel, spec, seeds[-1])
    kind = "two_step_epsgo" if tune else "two_step_fixed"
    hp = {"alpha": alphas, **hp}
    return MethodResult(kind, model, selected, hp, diag, tuple(flags) + f2, freq)


def run_two_step_fixed(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    return _two_step(stack, y, spec, tune=False)


def run_two_step_epsgo(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    return _two_step(stack, y, spec, tune=True)


def _univariate(stack, y, spec, pvalues, flags, extra):
    y = check_response(y, stack.n_rows)
    pen = np.flatnonzero(stack.penalised_mask)
    chosen = pen[pvalues]
    model, hp, f2 = ridge_on_selection(stack, y, chosen, spec, _seeds(spec.seed, 1)[0])
    return MethodResult(spec.kind, model, _selected_by_layer(stack, chosen),
                        {"level": spec.level, **hp}, extra, tuple(flags) + f2)


def run_univariate_wald(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    y = check_response(y, stack.n_rows)
    pen = np.flatnonzero(stack.penalised_mask)
    C = stack.matrix[:, list(stack.unpenalised_columns)]
    if C.shape[1] + 2 > stack.n_rows:
        raise ValueError("more predictors than rows in the screening model")
    _, z, p, ok = wald_logistic(C, stack.matrix[:, pen], y)
    flags = [f"skipped_variables:{int((~ok).sum())}"] if not ok.all() else []
    mask = ok & (p < spec.level)
    return _univariate(stack, y, spec, mask, flags, {"n_skipped": int((~ok).sum())})


def run_univariate_mw(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    y = check_response(y, stack.n_rows)
    pen = np.flatnonzero(stack.penalised_mask)
    _, p = mann_whitney(stack.matrix[:, pen], y)
    mask, adj = benjamini_hochberg(p, spec.level)
    return _univariate(stack, y, spec, mask, [], {"n_tested": int(pen.size)})


RUNNERS = {
    "naive_en": run_naive_en,
    "sipf_en": run_sipf_en,
    "ipf_en": run_ipf_en,
    "two_step_fixed": run_two_step_fixed,
    "two_step_epsgo": run_two_step_epsgo,
    "univariate_wald": run_univariate_wald,
    "univariate_mw": run_univariate_mw,
}


def run_method(stack: LayerStack, y, spec: MethodSpec) -> MethodResult:
    return RUNNERS[spec.kind](stack, y, spec)
