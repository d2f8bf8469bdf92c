from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
import yaml

from hybridsr.expr import TokenLibrary, is_complete, parse_infix_extended
from hybridsr.harness import cli
from hybridsr.harness.benchmarks import (
    SamplingRule,
    get_spec,
    instantiate_benchmark,
    load_registry,
    resolve_benchmarks,
)
from hybridsr.harness.recovery import is_recovered
from hybridsr.harness.report import family_summary, group_reports
from hybridsr.harness.runner import (
    ExperimentReport,
    RunRecord,
    aggregate_ci,
    load_records,
    run_experiment,
)
from hybridsr.hybrid import SearchConfig
from hybridsr.reward import reward

BASE = TokenLibrary.default(2)

EQUIVALENT = [
    ("x*(x*x+x+1)", "x^3+x^2+x", (-1, 1)),
    ("x+x", "2*x", (-1, 1)),
    ("sin(x)*cos(x)*2", "sin(2*x)", (-3, 3)),
    ("exp(log(x)/2)", "sqrt(x)", (0, 4)),
    ("log(x*x)", "2*log(x)", (0.1, 2)),
    ("(x+1)*(x+1)", "x^2+2*x+1", (-2, 2)),
    ("exp(x)*exp(x)", "exp(2*x)", (-1, 1)),
    ("x/x*x", "x", (-1, 1)),
    ("cos(x)*cos(x)+sin(x)*sin(x)", "1", (-5, 5)),
    ("sin(x+y)", "sin(x)*cos(y)+cos(x)*sin(y)", (-2, 2)),
    ("exp(y*log(x))", "pow(x, y)", (0, 1)),
    ("x^5*(x+1)/(x^4+x^3+x^2+x+1)", "(x^6+x^5)/(x^4+x^3+x^2+x+1)", (-10, 10)),
    ("1/(1/x)", "x", (0.5, 3)),
    ("x-(-x)", "2*x", (-1, 1)),
    ("(exp(x)-exp(-x))/2", "sinh(x)", (-1, 1)),
    ("(exp(x)+exp(x*(-1)))/2", "cosh(x)", (-1, 1)),
    ("log(exp(x))", "x", (-1, 1)),
    ("x*x*x*x/(x+y)", "x^4/(x+y)", (-1, 1)),
    ("1/exp(x*x)", "exp(-x^2)", (-1, 1)),
    ("exp(log(x)/3)", "pow(x, 1/3)", (0, 4)),
]

NEAR_MISS = [
    ("x^3+x^2+x+0.001", "x^3+x^2+x", (-1, 1)),
    ("x^3+x^2", "x^3+x^2+x", (-1, 1)),
    ("sin(x)", "x", (-1, 1)),
    ("sqrt(x*x)", "x", (0, 4)),
    ("x*1.0000001", "x", (-1, 1)),
    ("1+x+x^2/2+x^3/6+x^4/24+x^5/120", "exp(x)", (-1, 1)),
    ("x-x^2/2+x^3/3", "log(x+1)", (0, 2)),
    ("sin(x^2)*cos(x)-2", "sin(x^2)*cos(x)-1", (-1, 1)),
    ("x^5/y^2", "x^5/y^3", (-1, 1)),
    ("1-x^2/2", "cos(x)", (-1, 1)),
    ("sin(x)/cos(x)+0.000000001", "tan(x)", (-1, 1)),
    ("x^4-x^3+0.5*y^2-0.9999*y", "x^4-x^3+0.5*y^2-y", (0, 1)),
    ("2*sin(x)*cos(y+0.0001)", "2*sin(x)*cos(y)", (0, 1)),
    ("exp(-x^2*1.00001)", "exp(-x^2)", (-1, 1)),
    ("pow(x, 0.4001)", "pow(x, 0.4)", (0, 4)),
    ("0.3333+x+sin(x^2)", "1/3+x+sin(x^2)", (-10, 10)),
    ("x+y+x*y*0.00001", "x+y", (-1, 1)),
    ("log(x+1)+log(x^2+1.001)", "log(x+1)+log(x^2+1)", (0, 2)),
    ("x^2+0.00000001*x", "x^2", (-1, 1)),
    ("1+x^2/2+x^4/24", "cosh(x)", (-1, 1)),
]


def _verdict(cand, truth, dom, symbolic=False):
    clib, c = parse_infix_extended(cand, BASE)
    tlib, t = parse_infix_extended(truth, BASE)
    return is_recovered(c, t, [dom, dom], clib, tlib, symbolic=symbolic)


class TestRegistry:
    def test_completeness(self):
        reg = load_registry()
        families = {}
        for name in reg:
            families.setdefault(name.split("-")[0], []).append(name)
        assert len(families["Nguyen"]) == 13  # 12 + Nguyen-12*
        assert sorted(n for n in families["R"] if n.endswith("*")) == ["R-1*", "R-2*", "R-3*"]
        assert len(families["R"]) == 6
        assert len(families["Livermore"]) == 22
        assert len(families["Jin"]) == 6
        assert len(families["Neat"]) == 9

    @pytest.mark.parametrize("name", list(load_registry()))
    def test_every_spec_instantiates(self, name):
        bench = instantiate_benchmark(name)
        assert is_complete(bench.truth, bench.truth_library)
        assert bench.library.n_variables == bench.spec.n_variables
        ds = bench.dataset
        assert ds.n_variables == bench.spec.n_variables
        # the truth scores perfectly on its own data
        assert reward(bench.truth, bench.truth_library, ds).reward == 1.0

    def test_extended_libraries(self):
        for i in range(1, 7):
            names = set(get_spec(f"Jin-{i}").library().names)
            assert {"n2", "n3", "const", "x2"} <= names and "log" not in names
        assert {"tan", "tanh", "n2", "n3", "sqrt", "x2"} <= set(get_spec("Neat-7").library().names)
        assert "1" in get_spec("Neat-1").library().names
        assert set(get_spec("Neat-6").library().names) == {"add", "mul", "div", "inv", "neg", "sqrt", "x1"}
        assert "x2" not in get_spec("Nguyen-1").library().names

    def test_nguyen1_data(self):
        b = instantiate_benchmark("Nguyen-1")
        X = b.dataset.X_train
        assert X.shape == (20, 1) and X.min() >= -1 and X.max() <= 1
        assert not np.array_equal(X, b.dataset.X_test)

    def test_r1_star_data(self):
        b = instantiate_benchmark("R-1*")
        np.testing.assert_allclose(b.dataset.X_train[:, 0], np.linspace(-10, 10, 20))
        np.testing.assert_array_equal(b.dataset.X_train, b.dataset.X_test)

    def test_livermore1_data(self):
        X = instantiate_benchmark("Livermore-1").dataset.X_train
        assert X.shape == (1000, 1) and X.min() >= -10 and X.max() <= 10

    def test_neat6_separate_test_rule(self):
        d = instantiate_benchmark("Neat-6").dataset
        assert d.X_train.shape == (50, 1) and d.X_test.shape == (120, 1)

    def test_data_seed_changes_u_points(self):
        a = instantiate_benchmark("Nguyen-1", 0).dataset.X_train
        b = instantiate_benchmark("Nguyen-1", 1).dataset.X_train
        assert not np.array_equal(a, b)

    def test_errors(self):
        with pytest.raises(ValueError):
            SamplingRule("U", 1.0, 1.0, 20)
        with pytest.raises(ValueError):
            SamplingRule("U", 0.0, 1.0, 0)
        with pytest.raises(KeyError):
            get_spec("Nguyen-99")
        with pytest.raises(KeyError):
            resolve_benchmarks("nguyen,bogus")

    def test_suites(self):
        assert len(resolve_benchmarks("standard")) == 37
        assert resolve_benchmarks("Nguyen-1,nguyen")[:2] == ["Nguyen-1", "Nguyen-2"]
        assert len(resolve_benchmarks("all")) == 56


class TestRecovery:
    @pytest.mark.parametrize("cand,truth,dom", EQUIVALENT)
    def test_equivalent_pairs(self, cand, truth, dom):
        v = _verdict(cand, truth, dom)
        assert v.recovered, (cand, truth, v)

    @pytest.mark.parametrize("cand,truth,dom", NEAR_MISS)
    def test_near_miss_pairs(self, cand, truth, dom):
        v = _verdict(cand, truth, dom)
        assert not v.recovered, (cand, truth, v)

    def test_identical(self):
        b = instantiate_benchmark("Nguyen-4")
        assert is_recovered(b.truth, b.truth, b.dataset.domain, b.truth_library)

    def test_symbolic_stage_is_informational(self):
        v = _verdict("exp(log(x)/2)", "sqrt(x)", (0, 4), symbolic=True)
        assert v.recovered and v.symbolic is True
        v = _verdict("x+0.001", "x", (0, 1), symbolic=True)
        assert not v.recovered and v.symbolic is None

    def test_too_few_valid_points(self):
        v = _verdict("log(x-10)", "x", (0, 1))
        assert not v.recovered and v.n_valid == 0


def _record(bench, seed, recovered, label="pqt", nmse=0.0):
    return RunRecord(bench, seed, label, recovered, None, "x", 1.0, 10, 0.5, recovered, nmse, math.sqrt(nmse))


class TestReports:
    def test_arithmetic(self):
        rep = ExperimentReport("Nguyen-1", "pqt", [_record("Nguyen-1", s, s % 4 != 0, nmse=s) for s in range(8)])
        assert rep.recovery_rate == 100 * sum(r.recovered for r in rep.runs) / 8
        assert rep.min_nmse == 0.0
        lo, hi = rep.recovery_ci
        assert lo < rep.recovery_rate < hi

    def test_aggregate_ci(self):
        reps = [ExperimentReport(f"B{i}", "l", [_record(f"B{i}", s, s < i) for s in range(4)]) for i in range(5)]
        means = np.array([r.recovery_rate for r in reps])
        mean, half = aggregate_ci(reps)
        assert mean == pytest.approx(means.mean())
        assert half == pytest.approx(1.96 * means.std(ddof=1) / np.sqrt(5))

    def test_family_summary(self):
        recs = [_record("Nguyen-1", 0, True), _record("R-1*", 0, False), _record("Nguyen-1", 0, False, "rspg")]
        rows = {r["label"]: r for r in family_summary(group_reports(recs))}
        assert rows["pqt"]["all"] == 50.0 and rows["pqt"]["Nguyen"] == 100.0 and rows["pqt"]["R"] == 0.0
        assert rows["rspg"]["all"] == 0.0


def _strip_runtime(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    return [row[:-1] for row in rows]


class TestRunner:
    CFG = SearchConfig(batch_size=100, gp_generations=2, budget=600)

    def test_deterministic_outputs(self, tmp_path):
        a = run_experiment("Nguyen-1,Nguyen-5", self.CFG, 2, out_dir=tmp_path / "a", workers=1)
        b = run_experiment("Nguyen-1,Nguyen-5", self.CFG, 2, out_dir=tmp_path / "b", workers=1)
        assert [[(r.best_expression, r.candidates, r.recovered) for r in rep.runs] for rep in a] == \
               [[(r.best_expression, r.candidates, r.recovered) for r in rep.runs] for rep in b]
        assert _strip_runtime(tmp_path / "a" / "aggregate.csv") == _strip_runtime(tmp_path / "b" / "aggregate.csv")
        header = _strip_runtime(tmp_path / "a" / "aggregate.csv")[0]
        assert header == ["benchmark", "n_runs", "recovery_pct", "min_nmse"]
        for rel in ("runs/Nguyen-1/seed0.jsonl", "runs/Nguyen-5/seed1.jsonl"):
            la = [json.loads(line) for line in open(tmp_path / "a" / rel)]
            lb = [json.loads(line) for line in open(tmp_path / "b" / rel)]
            for x in la + lb:
                x.pop("wall_seconds", None)
            assert la == lb
        assert len(load_records(tmp_path / "a")) == 4

    def test_recovery_rate_matches_flags(self):
        reps = run_experiment("Nguyen-1", self.CFG.with_overrides(budget=5000), [0, 1, 2], workers=1)
        rep = reps[0]
        assert rep.n_runs == 3
        assert rep.recovery_rate == 100 * sum(r.recovered for r in rep.runs) / 3

    def test_bad_inputs(self):
        with pytest.raises(KeyError):
            run_experiment("Nguyen-77", self.CFG, 1)
        with pytest.raises(ValueError):
            run_experiment("Nguyen-1", self.CFG, 0)

    def test_process_pool_matches_serial(self):
        a = run_experiment("Nguyen-1", self.CFG, 2, workers=1)[0].runs
        b = run_experiment("Nguyen-1", self.CFG, 2, workers=2)[0].runs
        assert [(r.best_expression, r.candidates) for r in a] == [(r.best_expression, r.candidates) for r in b]


class TestCli:
    def test_list(self, capsys):
        assert cli.main(["list-benchmarks"]) == 0
        out = capsys.readouterr().out
        assert "Nguyen-12*" in out and "Neat-9" in out

    def test_verify(self, capsys):
        assert cli.main(["verify", "--benchmark", "Nguyen-8", "--candidate", "exp(log(x)/2)"]) == 0
        assert "recovered:   True" in capsys.readouterr().out
        assert cli.main(["verify", "--benchmark", "Nguyen-1", "--candidate", "x^3+x^2+x+0.001"]) == 1
        assert cli.main(["verify", "--benchmark", "Nguyen-1", "--candidate", "x +"]) == 2

    def test_run_config_and_report(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("batch_size: 100\ngp_generations: 2\nbudget: 100000\n")
        out = tmp_path / "out"
        rc = cli.main(["run", "--benchmark", "Nguyen-1", "--seeds", "0,1", "--config", str(cfg),
                       "--budget", "400", "--out", str(out), "--workers", "1"])
        assert rc == 0
        written = yaml.safe_load((out / "config.yaml").read_text())
        assert written["budget"] == 400 and written["batch_size"] == 100
        rc = cli.main(["run", "--benchmark", "Nguyen-1", "--seeds", "1", "--budget", "400", "--batch-size", "100",
                       "--ablation", "disable_gp", "--trainer", "rspg", "--out", str(out / "rnn"), "--workers", "1"])
        assert rc == 0
        capsys.readouterr()
        assert cli.main(["report", "--in", str(out)]) == 0
        text = capsys.readouterr().out
        assert "rspg+disable_gp" in text and "pqt" in text
        assert (out / "recovery_matrix.csv").exists()

    def test_bad_flags(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["run", "--benchmark", "Nguyen-1", "--ablation", "bogus"])
        assert cli.main(["run", "--benchmark", "Nope-1", "--budget", "500"]) == 2
