import csv
import json
import math

import pytest

from parareg.cli import COMMANDS, main
from parareg.config import SUITES, ExperimentConfig, load_config
from parareg._validation import ConfigurationError
from parareg.suites import CRITERIA, RUNNERS, Check, SuiteReport, run_suite, trial_rng


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.operator == "pucci-min" and cfg.seeds == (0, 1, 2) and not cfg.quick

    @pytest.mark.parametrize("kwargs", [dict(suite="nope"), dict(n=0), dict(resolution=0.9), dict(jobs=0),
                                        dict(trials=0), dict(cfl_factor=1.5)])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**kwargs)

    def test_ini(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[experiment]\nsuite = decay\nresolution = 1/32\nseeds = 1, 2, 5\nquick = yes\n"
                     "[operator]\nname = pucci-max\nlambda = 0.25\nLambda = 2\n")
        cfg = load_config(p)
        assert cfg.suite == "decay" and cfg.resolution == 1 / 32 and cfg.seeds == (1, 2, 5) and cfg.quick
        assert cfg.operator == "pucci-max" and cfg.operator_params == {"lambda": 0.25, "Lambda": 2.0}

    def test_json(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps({"suite": "iqa", "operator": "heat", "resolutions": ["1/16", "1/32"]}))
        cfg = load_config(p)
        assert cfg.operator == "heat" and cfg.resolutions == (1 / 16, 1 / 32)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "run.ini"
        p.write_text("[experiment]\ncolour = blue\n")
        with pytest.raises(ConfigurationError):
            load_config(p)

    def test_overrides_skip_none(self):
        cfg = ExperimentConfig(seed=3).with_overrides(seed=None, jobs=2)
        assert cfg.seed == 3 and cfg.jobs == 2


class TestChecks:
    @pytest.mark.parametrize("m,op,t,ok", [(1, "<=", 1, True), (2, "<", 2, False), (0, "==", 0, True),
                                           (3, ">=", 4, False), (math.nan, "<=", 1, False)])
    def test_comparison(self, m, op, t, ok):
        assert Check(1, "1a", "x", m, t, op).passed is ok

    def test_informational_does_not_count(self):
        rep = SuiteReport("demo")
        rep.add(1, "1a", "counted", 0, 0, "==")
        rep.add(1, "1b", "extra", 1, 0, "==", counted=False)
        assert rep.passed
        assert rep.lines()[1].startswith("[FAIL] 1b") and "[informational]" in rep.lines()[1]

    def test_write(self, tmp_path):
        rep = SuiteReport("demo")
        rep.add(1, "1a", "x", 0.5, 1, "<=")
        rep.tables["rows"] = [{"n": 1, "h": None, "value": 2.0}, {"n": 2, "extra": "y"}]
        rep.write(tmp_path)
        rows = list(csv.DictReader(open(tmp_path / "demo_rows.csv")))
        assert rows[0]["h"] == "" and rows[1]["extra"] == "y"
        data = json.loads((tmp_path / "demo.json").read_text())
        assert data["checks"][0]["passed"] is True and "elapsed" not in data

    def test_trial_streams_independent(self):
        a = trial_rng(0, 61, 0).random()
        assert a == trial_rng(0, 61, 0).random()
        assert a != trial_rng(0, 61, 1).random() and a != trial_rng(1, 61, 0).random()


class TestSuites:
    def test_registry(self):
        assert set(RUNNERS) == set(SUITES) == set(CRITERIA.values())
        assert set(COMMANDS["all"]) == set(SUITES)

    def test_rows_carry_grid_metadata(self, tmp_path):
        rep = run_suite("solver", ExperimentConfig(quick=True, out=str(tmp_path)))
        for table in rep.tables.values():
            for row in table:
                assert {"n", "h", "tau", "amplitude", "operator"} <= set(row)
        assert (tmp_path / "solver.json").exists()


class TestCommandLine:
    def test_barrier_exit_code_reflects_failure(self, tmp_path, capsys):
        code = main(["barrier", "--quick", "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert "== barrier" in out and "[PASS] 4b" in out
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert code == (0 if summary["passed"] else 1)
        assert summary["suites"]["barrier"]["checks"]["4b"] is True

    def test_solve_passes(self, capsys):
        assert main(["solve", "--quick"]) == 0
        assert "[PASS] 5a" in capsys.readouterr().out

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text("[experiment]\nn = 7\n")
        assert main(["solve", "--config", str(p)]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "absent.ini")]) == 2

    def test_reports_deterministic(self, tmp_path):
        for d in ("a", "b"):
            main(["cover", "--quick", "--trials", "5", "--seed", "3", "--out", str(tmp_path / d)])
        for name in ("geometry.json", "intersection.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        sa, sb = (json.loads((tmp_path / d / "summary.json").read_text()) for d in ("a", "b"))
        sa["config"].pop("out"), sb["config"].pop("out")
        assert sa == sb
        csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
        assert csvs
        for name in csvs:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
