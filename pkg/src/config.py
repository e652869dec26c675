"""Project-level configuration for solver tolerances, sampling and output.

This module centralizes shared defaults so operators, solvers, the scenario
runner and tests can reference a single source of truth for:

- Numerical tolerances and iteration budgets (optionally loaded from YAML).
- Stochastic defaults (seed, blow-up guard, Picard budget).
- Filesystem paths for settings, example scenarios and default outputs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml


def get_project_root() -> Path:
    """Return the repository root, assuming this file lives inside `src/`."""
    return Path(__file__).resolve().parent.parent


_PROJECT_ROOT = get_project_root()
SETTINGS_PATH: Path = _PROJECT_ROOT / "config" / "settings.yaml"
SCENARIOS_DIR: Path = _PROJECT_ROOT / "config" / "scenarios"
DEFAULT_OUTPUT_DIR: Path = _PROJECT_ROOT / "output"


def load_settings(path: Path | None = None) -> dict[str, Any]:
    """Load repo settings from YAML, returning an empty dict when missing.

    This keeps modules import-safe (e.g., on fresh clones) while enabling
    config-driven defaults when `config/settings.yaml` is present.
    """
    settings_path = Path(path) if path is not None else SETTINGS_PATH
    if not settings_path.exists():
        return {}
    data = yaml.safe_load(settings_path.read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"Expected YAML mapping at {settings_path}, got {type(data).__name__}")
    return data


def _section(settings: dict[str, Any], name: str) -> dict[str, Any]:
    value = settings.get(name, {})
    return value if isinstance(value, dict) else {}


def parse_seed(value: Any) -> int:
    """Parse a seed given as int or hex string ("0x2a" or "2a")."""
    if isinstance(value, bool):
        raise ValueError(f"Seed must be an integer or hex string, got {value!r}")
    if isinstance(value, int):
        seed = value
    elif isinstance(value, str):
        text = value.strip().lower()
        seed = int(text[2:] if text.startswith("0x") else text, 16)
    else:
        raise ValueError(f"Seed must be an integer or hex string, got {value!r}")
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"Seed must fit in 64 bits, got {value!r}")
    return seed


SETTINGS: dict[str, Any] = load_settings()
SOLVER_SETTINGS: dict[str, Any] = _section(SETTINGS, "solver")
STOCHASTIC_SETTINGS: dict[str, Any] = _section(SETTINGS, "stochastic")
ASYMPTOTICS_SETTINGS: dict[str, Any] = _section(SETTINGS, "asymptotics")
OUTPUT_SETTINGS: dict[str, Any] = _section(SETTINGS, "output")


# Solver defaults (can be overridden via config/settings.yaml)
RESOLVENT_TOL: float = float(SOLVER_SETTINGS.get("resolvent_tol", 1e-10))
BISECTION_TOL: float = float(SOLVER_SETTINGS.get("bisection_tol", 1e-12))
FIXED_POINT_MAX_ITER: int = int(SOLVER_SETTINGS.get("fixed_point_max_iter", 500))
DOMAIN_PROJECTION_EPS: float = float(SOLVER_SETTINGS.get("domain_projection_eps", 1e-8))
MOLLIFY_QUADRATURE_POINTS: int = int(SOLVER_SETTINGS.get("mollify_quadrature_points", 33))

# Stochastic defaults
DEFAULT_SEED: int = parse_seed(STOCHASTIC_SETTINGS.get("default_seed", "0x5eed"))
BLOWUP_FACTOR: float = float(STOCHASTIC_SETTINGS.get("blowup_factor", 1e6))
PICARD_MAX_ITER: int = int(STOCHASTIC_SETTINGS.get("picard_max_iter", 50))
CONTRACTION_ALARM: float = float(STOCHASTIC_SETTINGS.get("contraction_alarm", 0.9))

# Large-time behaviour defaults
SUPERMARTINGALE_BINS: int = int(ASYMPTOTICS_SETTINGS.get("supermartingale_bins", 5))
DECAY_SLACK: float = float(ASYMPTOTICS_SETTINGS.get("decay_slack", 1.1))
BURN_IN_FACTOR: float = float(ASYMPTOTICS_SETTINGS.get("burn_in_factor", 10.0))

# Artifact defaults
FLOAT_DIGITS: int = int(OUTPUT_SETTINGS.get("float_digits", 17))
SCHEMA_VERSION: int = int(OUTPUT_SETTINGS.get("schema_version", 1))
WRITE_PLOTS: bool = bool(OUTPUT_SETTINGS.get("plots", False))


def apply_settings(settings: dict[str, Any]) -> None:
    """Apply settings dict to module-level defaults (for script-level overrides).

    This is intended for CLI usage (e.g., `--settings path/to/file.yaml`) where
    we want a single run to use alternate defaults without threading a config
    object through every call site.
    """
    global SETTINGS, SOLVER_SETTINGS, STOCHASTIC_SETTINGS, ASYMPTOTICS_SETTINGS, OUTPUT_SETTINGS
    global RESOLVENT_TOL, BISECTION_TOL, FIXED_POINT_MAX_ITER, DOMAIN_PROJECTION_EPS, MOLLIFY_QUADRATURE_POINTS
    global DEFAULT_SEED, BLOWUP_FACTOR, PICARD_MAX_ITER, CONTRACTION_ALARM
    global SUPERMARTINGALE_BINS, DECAY_SLACK, BURN_IN_FACTOR
    global FLOAT_DIGITS, SCHEMA_VERSION, WRITE_PLOTS

    SETTINGS = settings
    SOLVER_SETTINGS = _section(SETTINGS, "solver")
    STOCHASTIC_SETTINGS = _section(SETTINGS, "stochastic")
    ASYMPTOTICS_SETTINGS = _section(SETTINGS, "asymptotics")
    OUTPUT_SETTINGS = _section(SETTINGS, "output")

    RESOLVENT_TOL = float(SOLVER_SETTINGS.get("resolvent_tol", RESOLVENT_TOL))
    BISECTION_TOL = float(SOLVER_SETTINGS.get("bisection_tol", BISECTION_TOL))
    FIXED_POINT_MAX_ITER = int(SOLVER_SETTINGS.get("fixed_point_max_iter", FIXED_POINT_MAX_ITER))
    DOMAIN_PROJECTION_EPS = float(SOLVER_SETTINGS.get("domain_projection_eps", DOMAIN_PROJECTION_EPS))
    MOLLIFY_QUADRATURE_POINTS = int(SOLVER_SETTINGS.get("mollify_quadrature_points", MOLLIFY_QUADRATURE_POINTS))

    DEFAULT_SEED = parse_seed(STOCHASTIC_SETTINGS.get("default_seed", DEFAULT_SEED))
    BLOWUP_FACTOR = float(STOCHASTIC_SETTINGS.get("blowup_factor", BLOWUP_FACTOR))
    PICARD_MAX_ITER = int(STOCHASTIC_SETTINGS.get("picard_max_iter", PICARD_MAX_ITER))
    CONTRACTION_ALARM = float(STOCHASTIC_SETTINGS.get("contraction_alarm", CONTRACTION_ALARM))

    SUPERMARTINGALE_BINS = int(ASYMPTOTICS_SETTINGS.get("supermartingale_bins", SUPERMARTINGALE_BINS))
    DECAY_SLACK = float(ASYMPTOTICS_SETTINGS.get("decay_slack", DECAY_SLACK))
    BURN_IN_FACTOR = float(ASYMPTOTICS_SETTINGS.get("burn_in_factor", BURN_IN_FACTOR))

    FLOAT_DIGITS = int(OUTPUT_SETTINGS.get("float_digits", FLOAT_DIGITS))
    SCHEMA_VERSION = int(OUTPUT_SETTINGS.get("schema_version", SCHEMA_VERSION))
    WRITE_PLOTS = bool(OUTPUT_SETTINGS.get("plots", WRITE_PLOTS))
