"""Synthetic two-layer benchmark data and method scoring.

Rows are drawn class-conditionally: ``x | y=0 ~ N(0, S)`` and
``x | y=1 ~ N(mu, S)`` where ``mu`` shifts the clinical columns and the
leading relevant columns of each penalised layer. ``S`` is either the
identity or an equicorrelated block pattern in which block ``k`` of layer 1
and block ``k`` of layer 2 form one correlated group.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import traceback
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import LayerStack, standardize
from .cv import misclassification_rate
from .methods import MethodResult, MethodSpec, run_method

METRICS = ("mr", "mr_cv", "n_selected", "precision", "recall")


@dataclass(frozen=True)
class SimSetting:
    """One simulation scenario; ``covariance`` is ``"Sigma0"`` or ``"Sigma1"``."""

    name: str
    P_N: int
    P1: int
    P2: int
    P1r: int
    P2r: int
    beta_N: float
    beta1: float
    beta2: float
    covariance: str = "Sigma0"
    rho: float = 0.4
    b: int = 10
    tau: float = 0.5
    n_train: int = 100
    n_test: int = 1000
    replicate_seed: int = 0

    def __post_init__(self):
        for k in ("P_N", "P1", "P2", "P1r", "P2r", "n_train", "b"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        if self.P1r > self.P1 or self.P2r > self.P2:
            raise ValueError("relevant counts exceed layer sizes")
        if self.P1 < 1 or self.P2 < 1:
            raise ValueError("both penalised layers need at least one column")
        if self.covariance not in ("Sigma0", "Sigma1"):
            raise ValueError(f"unknown covariance {self.covariance!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.n_train < 2:
            raise ValueError("n_train must be >= 2")
        if self.covariance == "Sigma1" and (self.b < 1 or self.P1 % self.b or self.P2 % self.b):
            raise ValueError(f"block count b={self.b} must divide P1={self.P1} and P2={self.P2}")

    @property
    def P(self) -> int:
        return self.P_N + self.P1 + self.P2

    def mean_shift(self) -> np.ndarray:
        mu = np.zeros(self.P)
        mu[:self.P_N] = self.beta_N
        mu[self.P_N:self.P_N + self.P1r] = self.beta1
        o = self.P_N + self.P1
        mu[o:o + self.P2r] = self.beta2
        return mu

    def relevant_mask(self) -> np.ndarray:
        m = np.zeros(self.P, dtype=bool)
        m[self.P_N:self.P_N + self.P1r] = True
        o = self.P_N + self.P1
        m[o:o + self.P2r] = True
        return m

    def to_dict(self) -> dict:
        return asdict(self)


def _setting(name, p1, p2, r1, r2, b1, b2):
    return SimSetting(name, 2, p1, p2, r1, r2, b1, b1, b2)


# beta_N equals beta1 throughout; Setting D has no relevant layer-2 columns
SETTINGS = {
    "A": _setting("A", 1000, 1000, 10, 10, 0.5, 0.5),
    "B": _setting("B", 100, 1000, 3, 30, 0.5, 0.5),
    "C": _setting("C", 100, 1000, 10, 10, 0.5, 0.5),
    "D": _setting("D", 100, 1000, 20, 0, 0.3, 0.0),
    "E": _setting("E", 20, 1000, 3, 10, 1.0, 0.3),
    "F": _setting("F", 20, 1000, 15, 3, 0.5, 0.5),
}


def reduce_setting(setting: SimSetting, cap: int = 200) -> SimSetting:
    """Shrink each penalised layer to at most ``cap`` columns.

    Sizes and relevant counts are scaled by the same factor, so the relevant
    fraction is kept; a layer that had relevant columns keeps at least one.
    """
    def shrink(p, r):
        f = min(1.0, cap / p)
        p_new = int(round(p * f))
        r_new = int(round(r * f))
        if r > 0:
            r_new = max(1, r_new)
        return p_new, min(r_new, p_new)

    p1, r1 = shrink(setting.P1, setting.P1r)
    p2, r2 = shrink(setting.P2, setting.P2r)
    return replace(setting, P1=p1, P1r=r1, P2=p2, P2r=r2)


def null_setting(base: SimSetting | None = None) -> SimSetting:
    """``base`` (reduced Setting A by default) with every mean shift set to zero."""
    base = base or reduce_setting(SETTINGS["A"])
    return replace(base, name="null", P1r=0, P2r=0, beta_N=0.0, beta1=0.0, beta2=0.0)


@dataclass(frozen=True, eq=False)
class BlockCovariance:
    """Covariance made of disjoint equicorrelated groups (unit variances).

    Columns outside every group are independent. ``groups`` lists column
    index arrays; within a group every off-diagonal entry is ``rho``.
    """

    P: int
    groups: tuple
    rho: float

    def entry(self, i: int, j: int) -> float:
        if i == j:
            return 1.0
        for g in self.groups:
            if i in g and j in g:
                return self.rho
        return 0.0

    def dense(self) -> np.ndarray:
        S = np.eye(self.P)
        for g in self.groups:
            idx = np.asarray(g)
            S[np.ix_(idx, idx)] = self.rho
            S[idx, idx] = 1.0
        return S

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws from ``N(0, S)`` in O(n P) via one shared factor per group."""
        Z = rng.standard_normal((n, self.P))
        if self.rho == 0 or not self.groups:
            return Z
        X = math.sqrt(1.0 - self.rho) * Z
        shared = math.sqrt(self.rho) * rng.standard_normal((n, len(self.groups)))
        for k, g in enumerate(self.groups):
            X[:, g] += shared[:, [k]]
        grouped = np.zeros(self.P, dtype=bool)
        for g in self.groups:
            grouped[g] = True
        X[:, ~grouped] = Z[:, ~grouped]
        return X


def build_sigma(setting: SimSetting) -> BlockCovariance:
    """Covariance of the setting in grouped form.

    ``Sigma0`` is the identity. ``Sigma1`` correlates all clinical columns
    with each other and, for ``k = 0 .. b-1``, the columns of block ``k`` of
    layer 1 with those of block ``k`` of layer 2; everything else is 0.
    """
    s = setting
    if s.covariance == "Sigma0" or s.rho == 0:
        return BlockCovariance(s.P, (), 0.0)
    groups = []
    if s.P_N > 1:
        groups.append(np.arange(s.P_N))
    w1, w2 = s.P1 // s.b, s.P2 // s.b
    o1, o2 = s.P_N, s.P_N + s.P1
    for k in range(s.b):
        groups.append(np.r_[np.arange(o1 + k * w1, o1 + (k + 1) * w1),
                            np.arange(o2 + k * w2, o2 + (k + 1) * w2)])
    return BlockCovariance(s.P, tuple(groups), s.rho)


@dataclass(frozen=True, eq=False)
class SimDataset:
    train: tuple
    test: tuple
    relevant_mask: np.ndarray
    setting: SimSetting


def _layers(setting):
    blocks = []
    if setting.P_N:
        blocks.append(("clinical", setting.P_N, False))
    blocks += [("omic1", setting.P1, True), ("omic2", setting.P2, True)]
    return blocks


def _stack(setting, X, prefix):
    blocks, pos = [], 0
    for name, size, pen in _layers(setting):
        blocks.append((name, X[:, pos:pos + size], pen))
        pos += size
    names = tuple(f"{name}_{k + 1}" for name, size, _ in _layers(setting) for k in range(size))
    ids = tuple(f"{prefix}{i + 1}" for i in range(X.shape[0]))
    return LayerStack.from_blocks(blocks, row_ids=ids, column_names=names)


def _draw(setting, sigma, rng, n, need_both):
    for _ in range(100):
        y = (rng.random(n) < setting.tau).astype(float)
        if not need_both or 0 < y.sum() < n:
            break
    else:
        raise RuntimeError(f"no two-class response in 100 draws (n={n}, tau={setting.tau})")
    X = sigma.sample(rng, n) + np.outer(y, setting.mean_shift())
    return X, y


def sample_dataset(setting: SimSetting, seed=None) -> SimDataset:
    """Independent train (``n_train``) and test (``n_test``) draws.

    Deterministic in ``seed`` (``setting.replicate_seed`` when omitted);
    train and test use separate random streams.
    """
    seed = setting.replicate_seed if seed is None else seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    r_train, r_test = (np.random.default_rng(s) for s in ss.spawn(2))
    sigma = build_sigma(setting)
    Xtr, ytr = _draw(setting, sigma, r_train, setting.n_train, True)
    Xte, yte = _draw(setting, sigma, r_test, setting.n_test, False)
    return SimDataset((_stack(setting, Xtr, "train"), ytr), (_stack(setting, Xte, "test"), yte),
                      setting.relevant_mask(), setting)


def standardize_dataset(data: SimDataset) -> SimDataset:
    """Standardize with training moments and apply them to the test rows."""
    train, params = standardize(data.train[0])
    test = params.apply(data.test[0])
    return SimDataset((train, data.train[1]), (test, data.test[1]),
                      data.relevant_mask[params.kept], data.setting)


@dataclass(frozen=True)
class MetricsReport:
    mr: float
    mr_cv: float
    n_selected: int
    precision: float
    recall: float

    def to_dict(self) -> dict:
        return asdict(self)


def selection_scores(selected, relevant_mask, penalised_mask=None) -> tuple[int, float, float]:
    """``(n_selected, precision, recall)`` over penalised columns.

    Empty selection has precision 1; with no relevant columns recall is 1.
    """
    relevant = set(np.flatnonzero(relevant_mask).tolist())
    sel = set(int(j) for j in selected)
    if penalised_mask is not None:
        sel = {j for j in sel if penalised_mask[j]}
    hit = len(sel & relevant)
    precision = hit / len(sel) if sel else 1.0
    recall = hit / len(relevant) if relevant else 1.0
    return len(sel), precision, recall


def score_method(result: MethodResult, data: SimDataset) -> MetricsReport:
    train, ytr = data.train
    test, yte = data.test
    if result.final_model.coefficients.size != test.n_cols:
        raise ValueError("model dimension differs from the data")
    mr = misclassification_rate(result.final_model, test, yte)
    mr_cv = misclassification_rate(result.final_model, train, ytr)
    n, prec, rec = selection_scores(result.selected, data.relevant_mask, train.penalised_mask)
    return MetricsReport(mr, mr_cv, n, prec, rec)


def _key(text: str) -> int:
    return zlib.crc32(text.encode())


def data_seed(seed: int, setting: SimSetting, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, _key(setting.name), _key(setting.covariance), replicate])


def method_seed(seed: int, setting: SimSetting, label: str, replicate: int) -> int:
    ss = np.random.SeedSequence([seed, _key(setting.name), _key(setting.covariance),
                                 _key(label), replicate])
    return int(ss.generate_state(1)[0])


def _as_specs(methods):
    out = []
    for m in methods:
        spec = MethodSpec(m) if isinstance(m, str) else m
        out.append((spec.kind, spec))
    labels = [lab for lab, _ in out]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate method in benchmark")
    return out


def _run_cell(args):
    setting, specs, replicate, seed = args
    data = standardize_dataset(sample_dataset(setting, data_seed(seed, setting, replicate)))
    out = []
    for label, spec in specs:
        spec = replace(spec, seed=method_seed(seed, setting, label, replicate))
        try:
            res = run_method(data.train[0], data.train[1], spec)
            out.append((label, "ok", score_method(res, data).to_dict(), ""))
        except Exception as exc:  # a failed cell is recorded, not fatal
            msg = f"{type(exc).__name__}: {exc}"
            out.append((label, "failed", None, msg + "\n" + traceback.format_exc(limit=3)))
    return setting.name, replicate, out


@dataclass(frozen=True, eq=False)
class BenchmarkReport:
    rows: list
    cells: list
    settings: tuple
    methods: tuple
    replicates: int
    seed: int

    def summary(self) -> dict:
        out = {}
        for s in self.settings:
            out[s] = {}
            for m in self.methods:
                ok = [c for c in self.cells if c["setting"] == s and c["method"] == m]
                good = [c["metrics"] for c in ok if c["status"] == "ok"]
                entry = {"n_ok": len(good), "n_failed": len(ok) - len(good)}
                for k in METRICS:
                    v = np.array([g[k] for g in good], dtype=float)
                    entry[k] = {"mean": float(v.mean()) if v.size else None,
                                "sd": float(v.std(ddof=1)) if v.size > 1 else None}
                out[s][m] = entry
        return out

    def mean(self, setting: str, method: str, metric: str) -> float:
        v = self.summary()[setting][method][metric]["mean"]
        return math.nan if v is None else v

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting", "method", "replicate", "metric", "value"])
        for r in self.rows:
            w.writerow([r[0], r[1], r[2], r[3], "%.17g" % r[4]])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {"seed": self.seed, "replicates": self.replicates,
               "conventions": {"precision_empty_selection": 1.0, "recall_no_relevant": 1.0},
               "summary": self.summary(),
               "failures": [{k: c[k] for k in ("setting", "method", "replicate", "error")}
                            for c in self.cells if c["status"] != "ok"]}
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "bench.csv"), "w", newline="") as fh:
            fh.write(self.csv_text())
        with open(os.path.join(out_dir, "bench_summary.json"), "w") as fh:
            fh.write(self.summary_json() + "\n")


def run_benchmark(settings, methods, replicates: int, seed: int = 0, jobs: int = 1) -> BenchmarkReport:
    """Every setting x method x replicate, with nested deterministic seeds.

    Data for ``(setting, replicate)`` depend only on ``(seed, setting,
    replicate)``, so all methods see the same replicate data. Cells run in a
    process pool when ``jobs > 1``; results are assembled in index order.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    settings = [SETTINGS[s] if isinstance(s, str) else s for s in settings]
    if len({s.name for s in settings}) != len(settings):
        raise ValueError("setting names must be unique within a benchmark")
    specs = _as_specs(methods)
    tasks = [(s, specs, r, seed) for s in settings for r in range(replicates)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    order = {s.name: i for i, s in enumerate(settings)}
    mindex = {lab: i for i, (lab, _) in enumerate(specs)}
    results.sort(key=lambda t: (order[t[0]], t[1]))
    rows, cells = [], []
    for sname, rep, outs in results:
        for label, status, metrics, err in sorted(outs, key=lambda o: mindex[o[0]]):
            cells.append({"setting": sname, "method": label, "replicate": rep, "status": status,
                          "metrics": metrics, "error": err.splitlines()[0] if err else ""})
            if status == "ok":
                rows.extend((sname, label, rep, k, float(metrics[k])) for k in METRICS)
    return BenchmarkReport(rows, cells, tuple(s.name for s in settings),
                           tuple(lab for lab, _ in specs), replicates, seed)
