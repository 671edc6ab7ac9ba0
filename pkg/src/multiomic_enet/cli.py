"""Command-line driver: ``simulate | fit | bench | rank | validate``.

Exit codes: 0 success, 1 computational failure, 2 usage or input error.
Every command writes a ``manifest.json`` next to its outputs recording the
command, arguments, seed, package versions and SHA-256 digests of inputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
import traceback
import warnings
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import ParseError, StandardizationParams, load_csv, save_csv, standardize
from .cv import misclassification_rate
from .enet import EnetConfig
from .epsgo import EpsgoConfig
from .methods import KINDS, MethodSpec, run_method
from .ranking import aggregate_ranks, per_layer_probabilities, validate_associations
from .simulate import (SETTINGS, SimSetting, reduce_setting, run_benchmark,
                       sample_dataset, selection_scores)


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit code 2)."""


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def _versions() -> dict:
    import numba
    import scipy
    return {"multiomic_enet": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def run_manifest(command: str, args: argparse.Namespace, inputs=(), extra=None) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    doc = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "versions": _versions(),
        "inputs": {str(p): _digest(p) for p in inputs},
        "created": _timestamp(),
    }
    doc.update(extra or {})
    return doc


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _jobs(args) -> int:
    if args.jobs is not None:
        return args.jobs
    env = os.environ.get("MULTIOMIC_ENET_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"MULTIOMIC_ENET_JOBS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _setting_from_args(args) -> SimSetting:
    if args.experiment:
        try:
            doc = json.loads(Path(args.experiment).read_text())
            setting = SimSetting(**doc)
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid experiment file {args.experiment}: {exc}") from None
    else:
        if args.setting not in SETTINGS:
            raise UsageError(f"unknown setting {args.setting!r}; choose from {', '.join(SETTINGS)}")
        setting = replace(SETTINGS[args.setting], covariance=args.covariance)
        if args.cap:
            setting = reduce_setting(setting, args.cap)
    if args.n_test is not None:
        setting = replace(setting, n_test=args.n_test)
    return setting


def cmd_simulate(args) -> int:
    setting = _setting_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = sample_dataset(setting, args.seed)
    tmp = out / ".layers.json"
    save_csv(*data.train, out / "train.csv", tmp)
    save_csv(*data.test, out / "test.csv", tmp)
    layers = json.loads(tmp.read_text())
    tmp.unlink()
    with open(out / "mask.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column_name", "relevant"])
        for name, rel in zip(data.train[0].column_names, data.relevant_mask):
            w.writerow([name, int(rel)])
    extra = {**layers, "setting": setting.to_dict()}
    _write_json(out / "manifest.json", run_manifest("simulate", args, extra=extra))
    return 0


def _read_mask(path, stack):
    try:
        with open(path, newline="") as fh:
            rows = {r["column_name"]: r["relevant"] in ("1", "true", "True") for r in csv.DictReader(fh)}
    except (OSError, KeyError) as exc:
        raise UsageError(f"cannot read mask {path}: {exc}") from None
    return np.array([rows.get(c, False) for c in stack.column_names])


def _method_spec(args) -> MethodSpec:
    epsgo = EpsgoConfig(max_evals=args.max_evals, patience=args.patience)
    try:
        return MethodSpec(args.method, alpha_fixed=args.alpha, cv_folds=args.folds,
                          repeats=args.repeats, epsgo=epsgo, seed=args.seed,
                          include_clinical=not args.exclude_clinical, level=args.level,
                          enet=EnetConfig(path_length=args.path_length))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(path, manifest, **kw):
    for p in (path, manifest):
        if not Path(p).is_file():
            raise UsageError(f"no such file: {p}")
    try:
        return load_csv(path, manifest, **kw)
    except ParseError as exc:
        raise UsageError(str(exc)) from None


def cmd_fit(args) -> int:
    spec = _method_spec(args)
    stack, y = _load(args.data, args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.data, args.manifest] + ([args.test] if args.test else [])
    _write_json(out / "manifest.json", run_manifest("fit", args, inputs, {"spec": spec.to_dict()}))
    train, params = standardize(stack)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = run_method(train, y, spec)
    except Exception as exc:
        _write_json(out / "result.json", {"kind": spec.kind, "status": "failed",
                                          "error": f"{type(exc).__name__}: {exc}",
                                          "traceback": traceback.format_exc()})
        print(f"error: {spec.kind} failed: {exc}", file=sys.stderr)
        return 1
    doc = result.to_dict()
    doc["status"] = "ok"
    doc["column_names"] = list(train.column_names)
    doc["standardization"] = {"means": params.means.tolist(), "scales": params.scales.tolist(),
                              "dropped": [stack.column_names[j] for j in params.dropped]}
    _write_json(out / "result.json", doc)
    result.write_selection_csv(out / "selection.csv", train)
    if args.test:
        test, yte = _load(args.test, args.manifest)
        test = params.apply(test)
        metrics = {"mr": misclassification_rate(result.final_model, test, yte),
                   "mr_cv": misclassification_rate(result.final_model, train, y)}
        if args.mask:
            n, prec, rec = selection_scores(result.selected, _read_mask(args.mask, train),
                                            train.penalised_mask)
            metrics.update(n_selected=n, precision=prec, recall=rec)
        else:
            metrics["n_selected"] = len(result.selected)
        _write_json(out / "metrics.json", metrics)
    return 0


def cmd_bench(args) -> int:
    names = [s.strip() for s in args.settings.split(",") if s.strip()]
    bad = [s for s in names if s not in SETTINGS]
    if bad:
        raise UsageError(f"unknown setting(s) {', '.join(bad)}")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in KINDS]
    if bad:
        raise UsageError(f"unknown method(s) {', '.join(bad)}")
    if args.replicates < 1:
        raise UsageError("--replicates must be >= 1")
    settings = [replace(SETTINGS[s], covariance=args.covariance) for s in names]
    if args.cap:
        settings = [reduce_setting(s, args.cap) for s in settings]
    if args.n_test is not None:
        settings = [replace(s, n_test=args.n_test) for s in settings]
    epsgo = EpsgoConfig(max_evals=args.max_evals, patience=args.patience)
    specs = [MethodSpec(m, epsgo=epsgo) for m in methods]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = _jobs(args)
    t0 = time.perf_counter()
    report = run_benchmark(settings, specs, args.replicates, args.seed, jobs)
    report.write(out)
    extra = {"settings": [s.to_dict() for s in settings], "jobs": jobs,
             "elapsed_seconds": round(time.perf_counter() - t0, 3)}
    _write_json(out / "manifest.json", run_manifest("bench", args, extra=extra))
    n_ok = sum(1 for c in report.cells if c["status"] == "ok")
    if n_ok == 0:
        print("error: every benchmark cell failed", file=sys.stderr)
        return 1
    return 0


def _read_probabilities(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
    except (OSError, StopIteration) as exc:
        raise UsageError(f"cannot read probabilities {path}: {exc}") from None
    if not header or header[0] != "person" or len(header) < 2:
        raise UsageError(f"{path}: header must be 'person,<layer>,...'")
    try:
        vals = np.array([[float(v) for v in r[1:]] for r in rows])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    persons = [r[0] for r in rows]
    full = None
    layers = header[1:]
    if "full_model_prob" in layers:
        k = layers.index("full_model_prob")
        full = vals[:, k]
        vals = np.delete(vals, k, axis=1)
        layers = layers[:k] + layers[k + 1:]
    return persons, {name: vals[:, i] for i, name in enumerate(layers)}, full


def _rank_design(stack, train_mask, sel_doc):
    """Standardize with the moments stored by ``fit`` when they match, else the labelled rows."""
    st = sel_doc.get("standardization")
    if st and len(st["means"]) == stack.n_cols:
        dropped = np.array([stack.column_names.index(c) for c in st["dropped"]
                            if c in stack.column_names], dtype=int)
        kept = np.setdiff1d(np.arange(stack.n_cols), dropped)
        params = StandardizationParams(np.asarray(st["means"]), np.asarray(st["scales"]), kept, dropped)
    else:
        _, params = standardize(stack.take_rows(np.flatnonzero(train_mask)))
    return params.apply(stack)


def _selected_by_name(selected, sel_doc, stack):
    """Translate selected indices through the fit's column names when available."""
    names = sel_doc.get("column_names")
    if not names:
        return selected
    pos = {c: j for j, c in enumerate(stack.column_names)}
    try:
        return {k: [pos[names[j]] for j in v] for k, v in selected.items()}
    except (KeyError, IndexError) as exc:
        raise UsageError(f"selection refers to a column missing from the data: {exc}") from None


def cmd_rank(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.probabilities:
        inputs = [args.probabilities]
        persons, probs, full = _read_probabilities(args.probabilities)
        excluded = {}
    else:
        if not (args.data and args.manifest and args.selection):
            raise UsageError("rank needs --probabilities, or --data, --manifest and --selection")
        inputs = [args.data, args.manifest, args.selection]
        stack, y = _load(args.data, args.manifest, allow_missing_response=True)
        try:
            sel_doc = json.loads(Path(args.selection).read_text())
            selected = {k: [int(j) for j in v] for k, v in sel_doc["per_layer_selected"].items()}
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise UsageError(f"cannot read selection {args.selection}: {exc}") from None
        train_mask = ~np.isnan(y)
        train = _rank_design(stack, train_mask, sel_doc)
        selected = _selected_by_name(selected, sel_doc, train)
        try:
            probs, excluded = per_layer_probabilities(train, y, train_mask, selected, args.folds, args.seed)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        persons = stack.row_ids
        full = None
        if "final_model" in sel_doc:
            from .enet import EnetFit
            fit = EnetFit.from_dict(sel_doc["final_model"])
            if fit.coefficients.size == train.n_cols:
                full = fit.predict_proba(train)
        if not probs:
            print("error: every layer has an empty selection", file=sys.stderr)
            return 1
    table = aggregate_ranks(probs, persons, full, excluded)
    table.write_csv(out / "ranks.csv")
    _write_json(out / "manifest.json", run_manifest("rank", args, inputs, {"excluded_layers": excluded}))
    return 0


def _read_table(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
    except (OSError, StopIteration) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    ids = [r[0] for r in rows]

    def num(v):
        try:
            return float(v) if v.strip() not in ("", "NA") else np.nan
        except ValueError:
            raise UsageError(f"{path}: non-numeric value {v!r}") from None

    cols = {h: np.array([num(r[j]) for r in rows]) for j, h in enumerate(header) if j > 0}
    return ids, cols


def cmd_validate(args) -> int:
    ids_o, omics = _read_table(args.omics)
    ids_p, params = _read_table(args.parameters)
    for c in (args.age, args.sex):
        if c not in params:
            raise UsageError(f"{args.parameters}: missing covariate column {c!r}")
    pos = {pid: i for i, pid in enumerate(ids_p)}
    common = [i for i, pid in enumerate(ids_o) if pid in pos]
    if not common:
        raise UsageError("no person ids shared between the two tables")
    rows_p = [pos[ids_o[i]] for i in common]
    age, sex = params.pop(args.age)[rows_p], params.pop(args.sex)[rows_p]
    omics = {k: v[common] for k, v in omics.items()}
    params = {k: v[rows_p] for k, v in params.items()}
    try:
        res = validate_associations(omics, params, age, sex, args.level)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "associations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "variable", "coefficient", "p_value", "adjusted_p", "significant", "flag"])
        for pn, vn, coef, p, q, sig, flag in res:
            w.writerow([pn, vn, "%.17g" % coef, "%.17g" % p, "%.17g" % q, int(sig), flag])
    _write_json(out / "manifest.json", run_manifest("validate", args, [args.omics, args.parameters]))
    return 0


def _add_setting_args(p):
    p.add_argument("--setting", default="A", help="built-in setting A-F")
    p.add_argument("--experiment", help="JSON file with SimSetting fields (overrides --setting)")
    p.add_argument("--covariance", choices=("Sigma0", "Sigma1"), default="Sigma0")
    p.add_argument("--cap", type=int, default=0, help="shrink penalised layers to at most CAP columns")
    p.add_argument("--n-test", type=int, default=None)


def _add_search_args(p):
    p.add_argument("--max-evals", type=int, default=None)
    p.add_argument("--patience", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiomic-enet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic train/test dataset")
    _add_setting_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run one integration method on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True, choices=KINDS)
    p.add_argument("--alpha", type=float, default=None, help="mixing value for two_step_fixed")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--path-length", type=int, default=100)
    p.add_argument("--exclude-clinical", action="store_true",
                   help="leave the clinical block out of per-layer selection fits")
    _add_search_args(p)
    p.add_argument("--test", help="held-out CSV with the same layout")
    p.add_argument("--mask", help="relevant-column CSV from simulate, for precision/recall")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="settings x methods x replicates benchmark")
    p.add_argument("--settings", default="A,B,C,D,E,F")
    p.add_argument("--methods", default="naive_en,sipf_en,two_step_fixed,two_step_epsgo,univariate_wald")
    p.add_argument("--covariance", choices=("Sigma0", "Sigma1"), default="Sigma0")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--cap", type=int, default=200)
    p.add_argument("--n-test", type=int, default=None)
    _add_search_args(p)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rank", help="per-layer probabilities and aggregated ranks")
    p.add_argument("--probabilities", help="CSV person,<layer>... of precomputed probabilities")
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--selection", help="result.json from fit")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("validate", help="OLS association checks adjusted for age and sex")
    p.add_argument("--omics", required=True, help="CSV person,<variable>...")
    p.add_argument("--parameters", required=True, help="CSV person,<parameter>...,age,sex")
    p.add_argument("--age", default="age")
    p.add_argument("--sex", default="sex", help="0/1 female indicator column")
    p.add_argument("--level", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a computational failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
