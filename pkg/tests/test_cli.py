import argparse
import csv
import hashlib
import json

import numpy as np
import pytest

import multiomic_enet.cli as cli
from multiomic_enet.cli import main


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(autouse=True)
def fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--setting", "A", "--cap", "20", "--n-test", "100", "--seed", "7",
                 "--out", str(out)]) == 0
    return out


def fit(sim, out, *extra):
    return main(["fit", "--data", str(sim / "train.csv"), "--manifest", str(sim / "manifest.json"),
                 "--folds", "5", "--path-length", "20", "--out", str(out), *extra])


def test_simulate_outputs_and_determinism(tmp_path, simulated):
    assert sorted(p.name for p in simulated.iterdir()) == ["manifest.json", "mask.csv", "test.csv",
                                                          "train.csv"]
    again = tmp_path / "again"
    main(["simulate", "--setting", "A", "--cap", "20", "--n-test", "100", "--seed", "7",
          "--out", str(again)])
    for name in ("train.csv", "test.csv", "mask.csv"):
        assert sha(simulated / name) == sha(again / name)
    doc = json.loads((simulated / "manifest.json").read_text())
    assert doc["command"] == "simulate" and doc["seed"] == 7
    assert doc["created"] == "2023-11-14T22:13:20Z"
    assert doc["setting"]["P1"] == 20


def test_unknown_setting_exits_two(tmp_path, capsys):
    assert main(["simulate", "--setting", "Z", "--out", str(tmp_path)]) == 2
    assert "unknown setting" in capsys.readouterr().err


def test_bad_flag_exits_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--method", "nope", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_fit_two_step_fixed(tmp_path, simulated):
    out = tmp_path / "fit"
    assert fit(simulated, out, "--method", "two_step_fixed", "--alpha", "0.1",
               "--test", str(simulated / "test.csv"), "--mask", str(simulated / "mask.csv")) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["status"] == "ok" and res["hyperparams"]["alpha"] == {"omic1": 0.1, "omic2": 0.1}
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) == {"mr", "mr_cv", "n_selected", "precision", "recall"}
    assert 0 <= metrics["mr"] <= 1
    with open(out / "selection.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == metrics["n_selected"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["inputs"][str(simulated / "train.csv")] == sha(simulated / "train.csv")


def test_fit_sipf_echoes_hyperparameters(tmp_path, simulated):
    out = tmp_path / "sipf"
    assert fit(simulated, out, "--method", "sipf_en", "--max-evals", "22") == 0
    hp = json.loads((out / "result.json").read_text())["hyperparams"]
    assert set(hp) == {"alpha", "ratios", "lambda1"} and "omic2" in hp["ratios"]


def test_fit_missing_manifest_exits_two(tmp_path, simulated):
    rc = main(["fit", "--data", str(simulated / "train.csv"), "--manifest", str(tmp_path / "none.json"),
               "--method", "naive_en", "--out", str(tmp_path / "o")])
    assert rc == 2


def test_fit_alpha_on_wrong_method_exits_two(tmp_path, simulated):
    assert fit(simulated, tmp_path / "o", "--method", "naive_en", "--alpha", "0.5") == 2


def test_fit_failure_writes_diagnostics(tmp_path, simulated, monkeypatch):
    def boom(*a):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli, "run_method", boom)
    out = tmp_path / "f"
    assert fit(simulated, out, "--method", "two_step_fixed") == 1
    res = json.loads((out / "result.json").read_text())
    assert res["status"] == "failed" and "solver exploded" in res["error"]


def test_bench_single_cell(tmp_path):
    out = tmp_path / "b"
    assert main(["bench", "--settings", "C", "--methods", "univariate_wald", "--replicates", "1",
                 "--cap", "20", "--n-test", "100", "--jobs", "1", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "bench.csv")))
    assert rows[0] == ["setting", "method", "replicate", "metric", "value"]
    assert [r[3] for r in rows[1:]] == ["mr", "mr_cv", "n_selected", "precision", "recall"]
    assert {r[1] for r in rows[1:]} == {"univariate_wald"}
    assert (out / "bench_summary.json").is_file() and (out / "manifest.json").is_file()


def test_bench_rejects_unknown_method(tmp_path):
    assert main(["bench", "--methods", "foo", "--out", str(tmp_path)]) == 2


def test_jobs_fallback(monkeypatch):
    ns = argparse.Namespace(jobs=None)
    monkeypatch.setenv("MULTIOMIC_ENET_JOBS", "3")
    assert cli._jobs(ns) == 3
    monkeypatch.setenv("MULTIOMIC_ENET_JOBS", "x")
    with pytest.raises(cli.UsageError):
        cli._jobs(ns)
    assert cli._jobs(argparse.Namespace(jobs=5)) == 5


def write_probs(path, layers, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["person", *layers])
        w.writerows(rows)


def read_column(path, name):
    with open(path) as fh:
        return [float(r[name]) for r in csv.DictReader(fh)]


def test_rank_from_probabilities(tmp_path):
    write_probs(tmp_path / "p.csv", ["a", "b"], [["x", 0.5, 0.9], ["y", 0.5, 0.1], ["z", 0.2, 0.4]])
    assert main(["rank", "--probabilities", str(tmp_path / "p.csv"), "--out", str(tmp_path / "r")]) == 0
    header = next(csv.reader(open(tmp_path / "r" / "ranks.csv")))
    assert header == ["person", "prob_a", "rank_a", "prob_b", "rank_b", "aggregate_rank",
                      "normalized_rank"]
    assert read_column(tmp_path / "r" / "ranks.csv", "rank_a") == [1.5, 1.5, 3.0]
    # same table with the layer columns swapped
    write_probs(tmp_path / "q.csv", ["b", "a"], [["x", 0.9, 0.5], ["y", 0.1, 0.5], ["z", 0.4, 0.2]])
    main(["rank", "--probabilities", str(tmp_path / "q.csv"), "--out", str(tmp_path / "s")])
    assert (read_column(tmp_path / "r" / "ranks.csv", "aggregate_rank")
            == read_column(tmp_path / "s" / "ranks.csv", "aggregate_rank"))


def test_rank_from_fit(tmp_path, simulated):
    fit(simulated, tmp_path / "fit", "--method", "two_step_fixed")
    out = tmp_path / "rank"
    rc = main(["rank", "--data", str(simulated / "train.csv"), "--manifest",
               str(simulated / "manifest.json"), "--selection", str(tmp_path / "fit" / "result.json"),
               "--folds", "5", "--out", str(out)])
    assert rc == 0
    header = next(csv.reader(open(out / "ranks.csv")))
    assert header[-1] == "full_model_prob"
    assert len(read_column(out / "ranks.csv", "aggregate_rank")) == 100


def test_rank_needs_inputs(tmp_path):
    assert main(["rank", "--out", str(tmp_path)]) == 2


def test_validate(tmp_path):
    rng = np.random.default_rng(0)
    n = 40
    param = rng.standard_normal(n)
    with open(tmp_path / "o.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["person", "sig", "noise"])
        for i in range(n):
            w.writerow([f"p{i}", param[i] + 0.05 * rng.standard_normal(), rng.standard_normal()])
    with open(tmp_path / "par.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["person", "bmi", "age", "sex"])
        for i in range(n):
            w.writerow([f"p{i}", param[i], 30 + i, i % 2])
    out = tmp_path / "v"
    assert main(["validate", "--omics", str(tmp_path / "o.csv"), "--parameters",
                 str(tmp_path / "par.csv"), "--out", str(out)]) == 0
    rows = {r["variable"]: r for r in csv.DictReader(open(out / "associations.csv"))}
    assert rows["sig"]["significant"] == "1" and rows["noise"]["significant"] == "0"


def test_validate_missing_covariate(tmp_path):
    write_probs(tmp_path / "o.csv", ["v"], [["a", 1]])
    write_probs(tmp_path / "p.csv", ["bmi"], [["a", 1]])
    assert main(["validate", "--omics", str(tmp_path / "o.csv"), "--parameters", str(tmp_path / "p.csv"),
                 "--out", str(tmp_path / "v")]) == 2
