import csv
import json
import subprocess
import sys

import pytest

from tabular_distrl.cli import main
from tabular_distrl.config import ConfigFileError, RunConfig, apply_overrides, load_config

MINIMAL = """\
[env]
name = "riverswim"
n = 4

[agent]
name = "psrl_pi"

[run]
total_steps = 300
seeds = [0, 1]
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(MINIMAL)
    return path


def files(d):
    return sorted(p.name for p in d.iterdir())


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.total_steps == 5000 and cfg.gamma == 0.95 and cfg.seeds == list(range(50))
        assert cfg.window == 100 and cfg.warmup_steps == 500
        latent = apply_overrides(cfg, ["env.name=latent_riverswim"])
        assert latent.total_steps == 10000 and latent.hidden_dim == 128 and cfg.hidden_dim == 0

    def test_unknown_key_line(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[env]\nname = \"riverswim\"\nnn = 3\n")
        with pytest.raises(ConfigFileError) as err:
            load_config(p)
        assert err.value.line == 3 and "env.nn" in str(err.value)

    def test_bad_value_line(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[run]\nwindow = 10\ngamma = 1.5\n")
        with pytest.raises(ConfigFileError) as err:
            load_config(p)
        assert err.value.line == 3

    def test_type_error_line(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[env]\nn = \"many\"\n")
        with pytest.raises(ConfigFileError) as err:
            load_config(p)
        assert err.value.line == 2

    def test_syntax_error_line(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[env]\nn = 4\nname = \n")
        with pytest.raises(ConfigFileError) as err:
            load_config(p)
        assert err.value.line == 3

    def test_override_list(self):
        cfg = apply_overrides(RunConfig(), ["run.seeds=1,2", "agent.lr=0.01"])
        assert cfg.seeds == [1, 2] and cfg.agent.lr == 0.01

    def test_override_errors(self):
        with pytest.raises(ConfigFileError):
            apply_overrides(RunConfig(), ["env.nn=3"])
        with pytest.raises(ConfigFileError):
            apply_overrides(RunConfig(), ["seeds"])

    def test_window_longer_than_run(self):
        with pytest.raises(ConfigFileError):
            apply_overrides(RunConfig(), ["run.total_steps=50"])


class TestRun:
    def test_minimal(self, cfg_file, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg_file), "--out", str(out), "--jobs", "1"]) == 0
        assert files(out) == [
            "aggregate_riverswim_n4_psrl_pi.csv",
            "metadata_riverswim_n4_psrl_pi.json",
            "raw_riverswim_n4_psrl_pi.csv",
        ]

    def test_unknown_key(self, tmp_path, capsys):
        p = tmp_path / "bad.toml"
        p.write_text("[env]\nnn = 4\n")
        assert main(["run", "--config", str(p)]) == 2
        err = capsys.readouterr().err
        assert "env.nn" in err and ":2:" in err

    def test_override_seeds(self, cfg_file, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--config", str(cfg_file), "--out", str(out), "--override", "run.seeds=1,2", "--jobs", "1"]) == 0
        seeds = {int(r["seed"]) for r in csv.DictReader(open(out / "raw_riverswim_n4_psrl_pi.csv"))}
        assert seeds == {1, 2}
        meta = json.loads((out / "metadata_riverswim_n4_psrl_pi.json").read_text())
        assert meta["config"]["run"]["seeds"] == [1, 2]

    def test_byte_identical(self, cfg_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg_file), "--out", str(a), "--jobs", "1"]) == 0
        assert main(["run", "--config", str(cfg_file), "--out", str(b), "--jobs", "2"]) == 0
        name = "raw_riverswim_n4_psrl_pi.csv"
        assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_metadata_round_trip(self, cfg_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg_file), "--out", str(a), "--jobs", "1"]) == 0
        meta = a / "metadata_riverswim_n4_psrl_pi.json"
        assert main(["run", "--config", str(meta), "--out", str(b), "--jobs", "1"]) == 0
        name = "raw_riverswim_n4_psrl_pi.csv"
        assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_bad_jobs(self, cfg_file):
        assert main(["run", "--config", str(cfg_file), "--jobs", "0"]) == 2

    def test_usage_error(self):
        assert main(["frobnicate"]) == 2


class TestSweepCommand:
    def test_small_grid(self, cfg_file, tmp_path, capsys):
        out = tmp_path / "s"
        rc = main([
            "sweep", "--config", str(cfg_file), "--out", str(out), "--jobs", "1",
            "--override", "sweep.horizons=3,4", "--override", "sweep.agents=psrl_pi,always_left",
        ])
        assert rc == 0
        table = list(csv.DictReader(open(out / "horizon_riverswim.csv")))
        assert [(r["n"], r["agent"]) for r in table] == [
            ("3", "psrl_pi"), ("3", "always_left"), ("4", "psrl_pi"), ("4", "always_left")
        ]
        assert all(float(r["final_mean"]) == 0 for r in table if r["agent"] == "always_left")


class TestVerify:
    def test_lemma2_only(self, tmp_path):
        report = tmp_path / "r.json"
        assert main(["verify", "--suite", "lemma2", "--seed", "3", "--out", str(report)]) == 0
        data = json.loads(report.read_text())
        assert data["num_certificates"] == 50
        assert all(c["name"].startswith("lemma2") for c in data["certificates"])
        for c in data["certificates"]:
            assert {"name", "lhs", "rhs", "slack", "pass"} <= set(c)

    def test_all_small(self, tmp_path):
        report = tmp_path / "r.json"
        rc = main(["verify", "--seed", "1", "--lemma1-count", "4", "--lemma2-count", "5", "--atoms", "1000",
                   "--jobs", "1", "--out", str(report)])
        assert rc == 0
        names = [c["name"] for c in json.loads(report.read_text())["certificates"]]
        assert sum(n.startswith("lemma1") for n in names) == 4
        assert sum(n.startswith("theorem1") for n in names) == 3

    def test_zero_slack_reports_failures(self, tmp_path, capsys):
        report = tmp_path / "r.json"
        rc = main(["verify", "--suite", "theorem1", "--slack-coef", "0", "--independent-draws", "--atoms", "1000",
                   "--out", str(report)])
        assert rc == 1
        data = json.loads(report.read_text())
        assert data["num_failed"] >= 1
        failed = data["failed"][0]
        assert failed["margin"] < 0 and failed["offending"]
        assert "FAILED" in capsys.readouterr().err

    def test_negative_slack_rejected(self):
        assert main(["verify", "--suite", "lemma2", "--tol", "-1"]) == 2


class TestPlot:
    def _agg(self, path, rows):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["suite", "env", "agent", "step", "mean", "stderr", "num_seeds"])
            w.writerows(rows)

    def test_single_curve_and_determinism(self, tmp_path):
        p = tmp_path / "a.csv"
        self._agg(p, [["default", "riverswim", "psrl_pi", s, 0.1 * i, 0.01, 3] for i, s in enumerate([100, 150, 200])])
        assert main(["plot", str(p), "--out", str(tmp_path / "1.svg")]) == 0
        assert main(["plot", str(p), "--out", str(tmp_path / "2.svg")]) == 0
        svg = (tmp_path / "1.svg").read_bytes()
        assert svg == (tmp_path / "2.svg").read_bytes()
        assert svg.count(b"<polyline") == 1 and svg.count(b"<polygon") == 1
        assert svg.startswith(b"<svg") and b"riverswim / psrl_pi" in svg

    def test_two_files(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self._agg(a, [["d", "riverswim", "iqql", s, 0.2, 0.01, 3] for s in (100, 150)])
        self._agg(b, [["d", "riverswim", "daif", s, 0.3, 0.02, 3] for s in (100, 150)])
        assert main(["plot", str(a), str(b), "--out", str(tmp_path / "c.svg")]) == 0
        assert (tmp_path / "c.svg").read_text().count("<polyline") == 2

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        assert main(["plot", str(p), "--out", str(tmp_path / "x.svg")]) == 2
        p.write_text("suite,env,agent,step,mean,stderr,num_seeds\n")
        assert main(["plot", str(p), "--out", str(tmp_path / "x.svg")]) == 2

    def test_mismatched_grid(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self._agg(a, [["d", "riverswim", "iqql", s, 0.2, 0.01, 3] for s in (100, 150)])
        self._agg(b, [["d", "riverswim", "daif", s, 0.3, 0.02, 3] for s in (100, 200)])
        assert main(["plot", str(a), str(b), "--out", str(tmp_path / "c.svg")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["plot", str(tmp_path / "nope.csv")]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tabular_distrl", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tabular-distrl" in proc.stdout
