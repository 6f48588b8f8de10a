"""Command line: list, validate and run, with exit codes and written artifacts."""

from __future__ import annotations

import dataclasses
import io
import json
from pathlib import Path

import pytest

from bohmlab.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, list_scenarios, main, run
from bohmlab.config import parse_config
from bohmlab.scenarios import ScenarioRegistry

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

PLANE_WAVE = """
[run]
scenario = "plane_wave"
seed = 5

[ensemble]
n = 20
"""


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("BOHMLAB_WORKERS", raising=False)


def _config(tmp_path: Path, text: str, name: str = "run.toml") -> Path:
    path = tmp_path / name
    path.write_text(text)
    return path


def _report(out: Path) -> dict:
    return json.loads((out / "report.json").read_text())


class TestList:
    def test_lists_library(self, capsys):
        assert main(["list"]) == EXIT_PASS
        out = capsys.readouterr().out
        for name in ("two_slit", "stationary_universe", "branching_universe", "pointer_measurement"):
            assert name in out

    def test_empty_registry(self):
        buf = io.StringIO()
        table = list_scenarios(ScenarioRegistry(), out=buf)
        assert table.splitlines()[0].startswith("scenario")
        assert len(table.splitlines()) == 2
        assert buf.getvalue() == table + "\n"


class TestValidate:
    def test_ok(self, tmp_path, capsys):
        assert main(["validate", str(_config(tmp_path, PLANE_WAVE))]) == EXIT_PASS
        assert "ok (plane_wave, seed 5)" in capsys.readouterr().out

    def test_unstable_dt(self, tmp_path, capsys):
        text = '[run]\nscenario = "two_slit"\nseed = 1\n\n[propagator]\ndt = 0.05\n'
        assert main(["validate", str(_config(tmp_path, text))]) == EXIT_CONFIG
        assert "dt exceeds spectral stability bound" in capsys.readouterr().err

    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml") if p.stem != "unstable_dt"))
    def test_shipped_configs(self, name):
        assert main(["validate", str(CONFIGS / name)]) == EXIT_PASS

    def test_shipped_unstable_config(self):
        assert main(["validate", str(CONFIGS / "unstable_dt.toml")]) == EXIT_CONFIG

    def test_missing_seed(self, tmp_path, capsys):
        text = '[run]\nscenario = "plane_wave"\n'
        assert main(["validate", str(_config(tmp_path, text))]) == EXIT_CONFIG
        assert "run.seed: missing" in capsys.readouterr().err


class TestRun:
    def test_passing_run(self, tmp_path):
        out = tmp_path / "a"
        assert main(["run", str(_config(tmp_path, PLANE_WAVE)), "--out", str(out)]) == EXIT_PASS
        report = _report(out)
        assert report["passed"] is True
        assert report["failures"] == []
        assert report["seed"] == 5
        assert {"trajectories.csv", "results.csv"} & set(report["artifacts"]) == {"trajectories.csv"}
        header = (out / "trajectories.csv").read_text().splitlines()[0]
        assert header == "t,q0,trajectory_id,u0"
        assert (out / "density_t0.csv").exists()
        assert report["diagnostics"]["trajectories"] == 20

    def test_same_seed_same_bytes(self, tmp_path):
        config = str(_config(tmp_path, PLANE_WAVE))
        main(["run", config, "--out", str(tmp_path / "a")])
        main(["run", config, "--out", str(tmp_path / "b")])
        for name in ("trajectories.csv", "density_t0.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        a, b = _report(tmp_path / "a"), _report(tmp_path / "b")
        a.pop("generated_at"), b.pop("generated_at")
        assert a == b

    def test_seed_flag(self, tmp_path):
        config = str(_config(tmp_path, PLANE_WAVE))
        main(["run", config, "--out", str(tmp_path / "a")])
        main(["run", config, "--seed", "6", "--out", str(tmp_path / "b")])
        assert _report(tmp_path / "b")["seed"] == 6
        assert (tmp_path / "a" / "trajectories.csv").read_bytes() != (tmp_path / "b" / "trajectories.csv").read_bytes()

    def test_failed_gate(self, tmp_path):
        text = '[run]\nscenario = "free_gaussian"\nseed = 2\n\n[ensemble]\nn = 20\n\n[tolerances]\ncontinuity = 1e-30\n'
        out = tmp_path / "fail"
        assert main(["run", str(_config(tmp_path, text)), "--out", str(out)]) == EXIT_FAIL
        report = _report(out)
        assert report["passed"] is False
        assert [f["name"] for f in report["failures"]] == ["continuity_residual"]
        assert report["failures"][0]["kind"] == "gate"

    def test_config_error_writes_report(self, tmp_path):
        text = '[run]\nscenario = "plane_wave"\nseed = 1\n\n[ensemble]\nn = 0\n'
        out = tmp_path / "bad"
        assert main(["run", str(_config(tmp_path, text)), "--out", str(out)]) == EXIT_CONFIG
        report = _report(out)
        assert report["passed"] is False
        assert report["failures"] == [{"kind": "config", "message": "ensemble.n: ensemble size must be >= 1"}]

    def test_setup_error_exits_with_config_status(self, tmp_path):
        text = '[run]\nscenario = "two_slit"\nseed = 1\n\n[propagator]\ndt = 0.05\n'
        out = tmp_path / "unstable"
        assert main(["run", str(_config(tmp_path, text)), "--out", str(out)]) == EXIT_CONFIG
        assert "dt exceeds spectral stability bound" in _report(out)["failures"][0]["message"]

    def test_plots(self, tmp_path):
        pytest.importorskip("matplotlib")
        text = PLANE_WAVE + "\n[plots]\ntrajectories = true\ndensity = true\n"
        out = tmp_path / "plots"
        assert main(["run", str(_config(tmp_path, text)), "--out", str(out)]) == EXIT_PASS
        assert (out / "trajectories.svg").exists()
        assert (out / "density_t0.svg").exists()

    def test_bad_scenario_parameter_writes_report(self, tmp_path, capsys):
        text = PLANE_WAVE + '\n[scenario]\nk = "two"\n'
        out = tmp_path / "badparam"
        assert main(["run", str(_config(tmp_path, text)), "--out", str(out)]) == EXIT_CONFIG
        assert _report(out)["failures"] == [{"kind": "config", "message": "scenario.k: expected float, got str"}]
        assert "scenario.k: expected float, got str" in capsys.readouterr().err

    def test_setup_value_error_exits_with_config_status(self, tmp_path):
        config = parse_config(_config(tmp_path, PLANE_WAVE)).with_output(tmp_path / "bad_init")
        config = dataclasses.replace(config, overrides={**config.overrides, "init": "sideways"})
        assert run(config) == EXIT_CONFIG
        assert _report(tmp_path / "bad_init")["failures"][0]["kind"] == "config"
