"""Per-layer case probabilities, average-rank aggregation and signature checks."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import LayerStack
from .cv import cv_lambda
from .enet import EnetConfig
from .stats import benjamini_hochberg, ols_t_test


@dataclass(frozen=True, eq=False)
class RankTable:
    """Rank 1 is the highest probability; ties share their average rank."""

    persons: tuple
    per_layer_prob: dict
    per_layer_rank: dict
    aggregate_rank: np.ndarray
    normalized_rank: np.ndarray
    full_model_prob: np.ndarray | None = None
    excluded: dict = field(default_factory=dict)

    @property
    def layers(self) -> list[str]:
        return list(self.per_layer_prob)

    def rows(self):
        for i, person in enumerate(self.persons):
            row = [person]
            for name in self.layers:
                row += [self.per_layer_prob[name][i], self.per_layer_rank[name][i]]
            row += [self.aggregate_rank[i], self.normalized_rank[i]]
            if self.full_model_prob is not None:
                row.append(self.full_model_prob[i])
            yield row

    def header(self) -> list[str]:
        head = ["person"]
        for name in self.layers:
            head += [f"prob_{name}", f"rank_{name}"]
        head += ["aggregate_rank", "normalized_rank"]
        if self.full_model_prob is not None:
            head.append("full_model_prob")
        return head

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([row[0]] + ["%.17g" % v for v in row[1:]])


def rank_desc(prob) -> np.ndarray:
    """Ranks with 1 for the largest value and averaged ties."""
    return rankdata(-np.asarray(prob, dtype=float), method="average")


def aggregate_ranks(per_layer_prob: dict, persons=None, full_model_prob=None,
                    excluded=None) -> RankTable:
    """Rank persons within each layer and average the ranks across layers.

    The normalised rank divides the mean rank by the number of persons.
    """
    if not per_layer_prob:
        raise ValueError("need at least one layer of probabilities")
    probs = {k: np.asarray(v, dtype=float) for k, v in per_layer_prob.items()}
    n = {v.size for v in probs.values()}
    if len(n) != 1:
        raise ValueError("layers disagree on the number of persons")
    n = n.pop()
    persons = tuple(persons) if persons is not None else tuple(f"p{i + 1}" for i in range(n))
    if len(persons) != n:
        raise ValueError("persons length differs from the probability vectors")
    ranks = {k: rank_desc(v) for k, v in probs.items()}
    agg = np.mean(np.vstack(list(ranks.values())), axis=0)
    full = None if full_model_prob is None else np.asarray(full_model_prob, dtype=float)
    return RankTable(persons, probs, ranks, agg, agg / n, full, dict(excluded or {}))


def per_layer_probabilities(stack: LayerStack, y, train_mask, per_layer_selected: dict,
                            n_folds: int = 10, seed: int = 0,
                            config: EnetConfig | None = None) -> tuple[dict, dict]:
    """Ridge model per layer on its selected columns, scored for every person.

    Only rows in ``train_mask`` (which must carry 0/1 labels) are used for
    fitting. Layers with an empty selection are skipped and reported in the
    second return value with the reason.
    """
    train_mask = np.asarray(train_mask, dtype=bool)
    y = np.asarray(y, dtype=float)
    ytr = y[train_mask]
    if np.any(np.isnan(ytr)) or not np.all(np.isin(ytr, (0.0, 1.0))):
        raise ValueError("training rows need 0/1 labels")
    if ytr.size == 0 or ytr.min() == ytr.max():
        raise ValueError("training rows need both classes")
    folds = min(n_folds, int(min(ytr.sum(), ytr.size - ytr.sum())))
    probs, excluded = {}, {}
    for name, cols in per_layer_selected.items():
        cols = sorted(int(j) for j in cols)
        if not cols:
            excluded[name] = "empty selection"
            continue
        X = stack.matrix[:, cols]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cv = cv_lambda(X[train_mask], ytr, 0.0, np.ones(len(cols)), max(folds, 2), seed,
                           config=config)
        probs[name] = cv.chosen_fit.predict_proba(X)
    return probs, excluded


@dataclass(frozen=True)
class Association:
    coefficient: float
    p_value: float
    rank_deficient: bool = False
    n: int = 0


def validate_signature(omic_column, parameter, age, sex) -> Association:
    """OLS of ``parameter`` on ``1 + age + female + omic``; t-test on the omic term.

    ``sex`` is a 0/1 female indicator. Rows with a missing value are dropped;
    at least 5 complete rows are required.
    """
    cols = [np.asarray(v, dtype=float) for v in (omic_column, parameter, age, sex)]
    n = {c.size for c in cols}
    if len(n) != 1:
        raise ValueError("inputs differ in length")
    keep = np.all(np.isfinite(np.vstack(cols)), axis=0)
    omic, param, age, sex = (c[keep] for c in cols)
    if keep.sum() < 5:
        raise ValueError(f"need at least 5 complete rows, got {int(keep.sum())}")
    design = np.column_stack([np.ones(omic.size), age, sex, omic])
    coef, p, deficient = ols_t_test(design, param, 3)
    return Association(coef, p, deficient, int(keep.sum()))


def validate_associations(omics: dict, parameters: dict, age, sex, level: float = 0.01):
    """All (parameter, variable) regressions with BH adjustment across the lot.

    Returns rows ``(parameter, variable, coefficient, p, adjusted_p, significant, flag)``.
    """
    pairs = []
    for pname, pvals in parameters.items():
        for vname, col in omics.items():
            pairs.append((pname, vname, validate_signature(col, pvals, age, sex)))
    if not pairs:
        return []
    pv = np.array([a.p_value for _, _, a in pairs])
    mask, adj = benjamini_hochberg(pv, level)
    return [(pn, vn, a.coefficient, a.p_value, float(q), bool(m),
             "rank_deficient" if a.rank_deficient else "")
            for (pn, vn, a), q, m in zip(pairs, adj, mask)]
