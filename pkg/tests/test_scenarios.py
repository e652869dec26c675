"""End-to-end tests for scenario loading, the runner and its artifacts."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402
import yaml  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from src.errors import ConfigError  # noqa: E402
from src.scenarios.runner import (  # noqa: E402
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    default_lags,
    list_kinds,
    run_scenario,
)
from src.scenarios.schema import load_scenario, scenario_from_dict  # noqa: E402

SCENARIOS = ROOT / "config" / "scenarios"


def _write(tmp_path: Path, data: dict, name: str = "scenario.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


def _small_sde(name: str = "small_sde") -> dict:
    return {
        "schema_version": 1,
        "name": name,
        "experiment": "SolveSde",
        "space": {"kind": "euclidean", "dim": 1},
        "operator": {"kind": "graph", "graph": {"name": "interval", "lo": 0.0}},
        "input": {"u0": 0.5, "drift": {"kind": "constant", "value": -0.2}},
        "noise": {"eigenvalues": [1.0], "diffusion": {"kind": "scaled_identity", "sigma": 0.3}},
        "grid": {"T": 1.0, "steps": 50},
        "ensemble": {"n_paths": 64, "seed": "0x2a"},
    }


def _artifact_bytes(out_dir: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.suffix in (".csv", ".json")}


def test_obstacle_scenario_reproduces_closed_form(tmp_path):
    result = run_scenario(SCENARIOS / "obstacle_ode.yaml", out=tmp_path)

    assert result.exit_code == EXIT_OK
    series = pd.read_csv(tmp_path / "obstacle_ode.series.csv")
    assert list(series.columns) == ["t", "u0", "eta0"]
    assert series["t"].iloc[-1] == pytest.approx(2.0)
    assert series["u0"].iloc[-1] == 0.0
    assert np.allclose(series["u0"], np.maximum(1.0 - series["t"], 0.0), atol=2e-3)

    summary = json.loads((tmp_path / "obstacle_ode.summary.json").read_text())
    names = {c["name"] for c in summary["checks"]}
    assert {"variational_inequality", "reflection_oracle"} <= names
    assert summary["passed"] is True
    assert "output" not in summary["config"]


def test_unknown_operator_kind_names_field_and_line(tmp_path):
    text = (
        "schema_version: 1\n"
        "name: broken\n"
        "experiment: SolveDet\n"
        "operator:\n"
        "  kind: foo\n"
        "grid:\n"
        "  T: 1.0\n"
        "  steps: 10\n"
    )
    path = tmp_path / "broken.yaml"
    path.write_text(text)

    result = run_scenario(path, out=tmp_path / "out")

    assert result.exit_code == EXIT_CONFIG
    assert isinstance(result.error, ConfigError)
    assert result.error.field == "operator.kind"
    assert result.error.line == 5
    assert "foo" in str(result.error)
    assert not (tmp_path / "out").exists()


def test_yaml_syntax_error_reports_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: bad\noperator: [unclosed\n")

    with pytest.raises(ConfigError) as info:
        load_scenario(path)
    assert info.value.line is not None


def test_missing_seed_for_stochastic_scenario(tmp_path):
    data = _small_sde()
    del data["ensemble"]["seed"]

    with pytest.raises(ConfigError) as info:
        load_scenario(_write(tmp_path, data))
    assert info.value.field == "ensemble.seed"


def test_same_seed_gives_byte_identical_artifacts(tmp_path):
    path = _write(tmp_path, _small_sde())

    first = run_scenario(path, out=tmp_path / "a")
    second = run_scenario(path, out=tmp_path / "b")

    assert first.exit_code == second.exit_code
    a, b = _artifact_bytes(tmp_path / "a"), _artifact_bytes(tmp_path / "b")
    assert set(a) == {"small_sde.series.csv", "small_sde.path0.csv", "small_sde.summary.json", "small_sde.provenance.json"}
    assert a == b


def test_seed_override_changes_results(tmp_path):
    path = _write(tmp_path, _small_sde())

    run_scenario(path, out=tmp_path / "a")
    run_scenario(path, out=tmp_path / "b", seed="0x2b")

    a = (tmp_path / "a" / "small_sde.series.csv").read_bytes()
    b = (tmp_path / "b" / "small_sde.series.csv").read_bytes()
    assert a != b


def test_summary_reload_reproduces_artifacts(tmp_path):
    first = run_scenario(SCENARIOS / "obstacle_ode.yaml", out=tmp_path / "a")
    again = run_scenario(first.artifacts["summary"], out=tmp_path / "b")

    assert again.exit_code == EXIT_OK
    assert _artifact_bytes(tmp_path / "a") == _artifact_bytes(tmp_path / "b")


def test_provenance_records_hash_seed_and_version(tmp_path):
    path = _write(tmp_path, _small_sde())
    result = run_scenario(path, out=tmp_path / "out")

    provenance = json.loads(result.artifacts["provenance"].read_text())
    assert provenance["config_sha256"] == result.scenario.config_hash()
    assert provenance["seed"] == "0x2a"
    assert provenance["version"] == "0.1.0"
    assert provenance["schema_version"] == 1


def test_overrides_reach_the_resolved_config(tmp_path):
    scenario = load_scenario(SCENARIOS / "linear_decay.yaml", out=tmp_path, seed="0x2A", paths=7, steps=10)

    cfg = scenario.config
    assert cfg["ensemble"] == {"n_paths": 7, "seed": "0x2a"}
    assert cfg["grid"]["steps"] == 10
    assert scenario.output_dir == tmp_path


def test_resolved_config_fills_defaults():
    scenario = scenario_from_dict(
        {
            "name": "defaults",
            "experiment": "SolveDet",
            "operator": {"kind": "zero"},
            "grid": {"steps": 4},
        }
    )

    cfg = scenario.config
    assert cfg["schema_version"] == 1
    assert cfg["space"] == {"kind": "euclidean", "dim": 1}
    assert cfg["input"]["M"] == {"kind": "zero"}
    assert cfg["solver"]["scheme"] == "prox"
    assert cfg["tolerances"] == {"vi": 1e-8, "apriori": 1e-8}
    assert cfg["grid"]["T"] == 1.0


def test_failed_check_exits_one(tmp_path):
    data = yaml.safe_load((SCENARIOS / "sign_audit.yaml").read_text())
    data["audit"]["r0"] = 5.0

    result = run_scenario(_write(tmp_path, data), out=tmp_path / "out")

    assert result.exit_code == EXIT_CHECK_FAILED
    h1 = next(c for c in result.summary["checks"] if c["name"] == "h1_audit")
    assert h1["passed"] is False


def test_step_size_violation_is_config_error(tmp_path):
    data = yaml.safe_load((SCENARIOS / "obstacle_ode.yaml").read_text())
    data["solver"] = {"scheme": "penalized", "eps": 1e-3}
    data["grid"]["steps"] = 100

    result = run_scenario(_write(tmp_path, data), out=tmp_path / "out")

    assert result.exit_code == EXIT_CONFIG


def test_blown_up_paths_exit_three(tmp_path):
    data = _small_sde("explosive")
    data["operator"] = {"kind": "zero"}
    data["input"] = {"u0": 1.0, "drift": {"kind": "linear", "matrix": [[40.0]]}}
    data["grid"] = {"T": 1.0, "steps": 100}
    data["ensemble"]["n_paths"] = 8

    result = run_scenario(_write(tmp_path, data), out=tmp_path / "out")

    assert result.exit_code == EXIT_NUMERICAL
    assert result.summary["n_aborted"] == 8
    assert (tmp_path / "out" / "explosive.summary.json").exists()


def test_audit_command_runs_only_the_coercivity_audit(tmp_path):
    only = run_scenario(SCENARIOS / "sign_audit.yaml", out=tmp_path / "a", audit_only=True)
    full = run_scenario(SCENARIOS / "sign_audit.yaml", out=tmp_path / "b")

    assert only.exit_code == EXIT_OK
    assert [c["name"] for c in only.summary["checks"]] == ["h1_audit"]
    names = [c["name"] for c in full.summary["checks"]]
    assert names[0] == "h1_audit"
    assert "resolvent_nonexpansive" in names


def test_audit_command_without_audit_section(tmp_path):
    result = run_scenario(SCENARIOS / "obstacle_ode.yaml", out=tmp_path, audit_only=True)

    assert result.exit_code == EXIT_CONFIG
    assert result.error.field == "audit"


def test_deterministic_penalization_sweep_scenario(tmp_path):
    result = run_scenario(SCENARIOS / "obstacle_penalization.yaml", out=tmp_path)

    assert result.exit_code == EXIT_OK
    table = pd.read_csv(tmp_path / "obstacle_penalization.table.csv")
    assert table["eps"].tolist() == [0.1, 0.01, 0.001]
    assert table["sup_err"].iloc[-1] <= 1.1e-3


def test_list_kinds_enumerates_registries():
    kinds = list_kinds()

    assert "composite" in kinds["operators"]
    assert kinds["graphs"]["interval"] == ["lo", "hi"]
    assert set(kinds["sets"]) == {"box", "ball", "halfspace"}
    assert "Invariant" in kinds["experiments"]
    assert "msde" in kinds["schemes"]["stochastic"]


def test_default_lags_are_increasing_pairs():
    assert default_lags(101) == [(0, 25), (25, 50), (50, 100)]
    assert default_lags(2) == [(0, 1)]


def test_every_example_scenario_validates():
    for path in sorted(SCENARIOS.glob("*.yaml")):
        scenario = load_scenario(path)
        assert scenario.name == path.stem


def test_plots_flag_writes_figures(tmp_path):
    result = run_scenario(SCENARIOS / "obstacle_ode.yaml", out=tmp_path, plots=True)

    assert result.exit_code == EXIT_OK
    assert result.artifacts["plot_solution"] == tmp_path / "obstacle_ode.solution.png"
    assert result.artifacts["plot_solution"].stat().st_size > 0


def test_penalized_scheme_scenario_passes_certificate(tmp_path):
    data = yaml.safe_load((SCENARIOS / "obstacle_ode.yaml").read_text())
    data["solver"] = {"scheme": "penalized", "eps": 1e-2}
    data["grid"]["steps"] = 800
    del data["params"]

    result = run_scenario(_write(tmp_path, data), out=tmp_path / "out")

    assert result.exit_code == EXIT_OK
    vi = next(c for c in result.summary["checks"] if c["name"] == "variational_inequality")
    assert vi["passed"] is True
    assert vi["details"]["form"] == "resolvent_path"
