"""Tests for the run_scenario.py driver."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

import run_scenario  # noqa: E402


def test_run_by_shipped_name(tmp_path, capsys):
    code = run_scenario.main(["run", "obstacle_ode", "--out", str(tmp_path)])

    assert code == 0
    out = capsys.readouterr().out
    assert "PASS  variational_inequality" in out
    assert (tmp_path / "obstacle_ode.summary.json").exists()


def test_list_kinds_prints_json(capsys):
    code = run_scenario.main(["list-kinds"])

    assert code == 0
    kinds = json.loads(capsys.readouterr().out)
    assert "SolveSde" in kinds["experiments"]


def test_missing_file_is_config_error(tmp_path, capsys):
    code = run_scenario.main(["run", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)])

    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_audit_subcommand(tmp_path):
    assert run_scenario.main(["audit", "sign_audit", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "sign_audit.summary.json").read_text())
    assert [c["name"] for c in summary["checks"]] == ["h1_audit"]


def test_resolve_scenario_path_prefers_existing_files(tmp_path):
    local = tmp_path / "obstacle_ode"
    local.write_text("name: x\n")

    assert run_scenario.resolve_scenario_path(str(local)) == local
    assert run_scenario.resolve_scenario_path("obstacle_ode").name == "obstacle_ode.yaml"
