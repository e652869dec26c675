"""Command-line driver for scenario files.

Usage:
    python run_scenario.py run config/scenarios/obstacle_ode.yaml --out output
    python run_scenario.py run config/scenarios/linear_decay.yaml --seed 0x2a --paths 2000
    python run_scenario.py list-kinds
    python run_scenario.py audit config/scenarios/sign_audit.yaml

Exit status: 0 all checks passed, 1 a check failed, 2 configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List

# Ensure src/ is on path when executed from repo root.
ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from src import config as project_config  # noqa: E402
from src.scenarios.runner import EXIT_CONFIG, list_kinds, run_scenario  # noqa: E402


def _add_scenario_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("scenario", type=str, help="Scenario YAML file, a shipped example name, or a summary JSON from a previous run")
    parser.add_argument("--out", type=str, default=None, help="Output directory (overrides output.dir)")
    parser.add_argument("--seed", type=str, default=None, help="Master seed as hex, e.g. 0x5eed (overrides ensemble.seed)")
    parser.add_argument("--paths", type=int, default=None, help="Ensemble size (overrides ensemble.n_paths)")
    parser.add_argument("--steps", type=int, default=None, help="Number of time steps (overrides grid.steps)")


def resolve_scenario_path(value: str) -> Path:
    """Accept a file path or the bare name of a shipped example under config/scenarios/."""
    path = Path(value)
    if path.exists():
        return path
    shipped = project_config.SCENARIOS_DIR / f"{value}.yaml"
    return shipped if shipped.exists() else path


def parse_args(argv: List[str] | None = None) -> argparse.Namespace:
    pre_parser = argparse.ArgumentParser(add_help=False)
    pre_parser.add_argument(
        "--settings",
        type=str,
        default=None,
        help="Optional YAML settings path to override defaults for this run",
    )
    pre_args, _ = pre_parser.parse_known_args(argv)
    if pre_args.settings:
        settings_path = Path(pre_args.settings)
        if not settings_path.exists():
            raise FileNotFoundError(f"Settings file not found: {settings_path}")
        project_config.apply_settings(project_config.load_settings(settings_path))

    parser = argparse.ArgumentParser(description="Run monotone-inclusion scenarios and write their artifacts.")
    parser.add_argument(
        "--settings",
        type=str,
        default=pre_args.settings,
        help="Optional YAML settings path to override defaults for this run",
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Logging level for the run",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario and write series, summary and provenance artifacts")
    _add_scenario_options(run)
    run.add_argument(
        "--plots",
        action="store_true",
        default=project_config.WRITE_PLOTS,
        help="Also write PNG figures next to the artifacts",
    )

    sub.add_parser("list-kinds", help="List operator, graph, set, noise and experiment kinds")

    audit = sub.add_parser("audit", help="Run only the coercivity audit of a scenario")
    _add_scenario_options(audit)
    return parser.parse_args(argv)


def main(argv: List[str] | None = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command == "list-kinds":
        print(json.dumps(list_kinds(), indent=2))
        return 0

    result = run_scenario(
        resolve_scenario_path(args.scenario),
        out=args.out,
        seed=args.seed,
        paths=args.paths,
        steps=args.steps,
        plots=getattr(args, "plots", False),
        audit_only=args.command == "audit",
    )
    if result.exit_code == EXIT_CONFIG:
        print(f"config error: {result.error}", file=sys.stderr)
        return result.exit_code

    summary = result.summary or {}
    for check in summary.get("checks", []):
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status:4s}  {check['name']:<28s} value={check['value']} threshold={check['threshold']}")
    if "error" in summary:
        print(f"numerical abort: {summary['error']['message']}", file=sys.stderr)
    for key, path in sorted(result.artifacts.items()):
        print(f"wrote {key}: {path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
