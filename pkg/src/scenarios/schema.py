"""Scenario files: loading, validation and the fully resolved config.

A scenario is a YAML mapping (or a JSON summary written by the runner, whose
embedded ``config`` is used). Validation errors raise ConfigError carrying
the dotted field path and, for YAML sources, the line of the offending entry.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping

import yaml

from src import config as project_config
from src.analysis.reports import to_builtin
from src.errors import ConfigError
from src.scenarios import builders

EXPERIMENTS = ("SolveDet", "SolveSde", "Convergence", "Stability", "Invariant", "Audit")
NOISE_REQUIRED = ("SolveSde", "Invariant")
CONSTANT_KEYS = ("a", "alpha", "L1", "b1", "L", "b")
NONNEGATIVE_CONSTANTS = ("a", "L1", "b1", "L", "b")
TOP_LEVEL_KEYS = (
    "schema_version",
    "name",
    "experiment",
    "space",
    "operator",
    "constants",
    "input",
    "noise",
    "grid",
    "ensemble",
    "solver",
    "tolerances",
    "params",
    "audit",
    "output",
)
DEFAULT_TOLERANCES = {"vi": 1e-8, "apriori": 1e-8}


def _line_index(node: yaml.Node, prefix: str = "", index: Dict[str, int] | None = None) -> Dict[str, int]:
    """Map dotted paths to 1-based source lines from a composed YAML node tree."""
    index = {} if index is None else index
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            index[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, index)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            index[path] = item.start_mark.line + 1
            _line_index(item, path, index)
    return index


@dataclass
class Scenario:
    """Validated scenario. `config` is the resolved mapping embedded in every summary."""

    config: Dict[str, Any]
    source: Path | None = None
    lines: Dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def name(self) -> str:
        return self.config["name"]

    @property
    def experiment(self) -> str:
        return self.config["experiment"]

    @property
    def stochastic(self) -> bool:
        return self.config.get("noise") is not None

    @property
    def seed(self) -> str | None:
        return self.config["ensemble"].get("seed")

    @property
    def output_dir(self) -> Path:
        return Path(self.config["output"]["dir"])

    @property
    def portable_config(self) -> Dict[str, Any]:
        """Resolved config without the output location, which does not change any result."""
        return {k: v for k, v in self.config.items() if k != "output"}

    def canonical(self) -> str:
        return json.dumps(self.portable_config, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def error(self, message: str, field_path: str) -> ConfigError:
        return config_error(message, field_path, self.lines)


def config_error(message: str, field_path: str, lines: Mapping[str, int]) -> ConfigError:
    """ConfigError at `field_path`, with the line of the nearest located ancestor."""
    path = field_path
    while path and path not in lines:
        cut = max(path.rfind("."), path.rfind("["))
        path = path[:cut] if cut > 0 else ""
    return ConfigError(message, field_path, lines.get(path))


class _Validator:
    def __init__(self, lines: Mapping[str, int]) -> None:
        self.lines = lines

    def fail(self, message: str, path: str) -> ConfigError:
        return config_error(message, path, self.lines)

    def mapping(self, value: Any, path: str, required: bool = False) -> Dict[str, Any]:
        if value is None:
            if required:
                raise self.fail("missing required section", path)
            return {}
        if not isinstance(value, dict):
            raise self.fail(f"expected a mapping, got {type(value).__name__}", path)
        return value

    def number(self, value: Any, path: str, minimum: float | None = None, positive: bool = False) -> float:
        if isinstance(value, bool):
            raise self.fail(f"expected a number, got {value!r}", path)
        try:
            # YAML 1.1 reads "1e-8" as a string
            out = float(value)
        except (TypeError, ValueError):
            raise self.fail(f"expected a number, got {value!r}", path) from None
        if positive and not out > 0:
            raise self.fail(f"must be > 0, got {out}", path)
        if minimum is not None and out < minimum:
            raise self.fail(f"must be >= {minimum}, got {out}", path)
        return out

    def integer(self, value: Any, path: str, minimum: int = 0) -> int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise self.fail(f"expected an integer, got {value!r}", path)
        try:
            out = int(value)
        except ValueError:
            raise self.fail(f"expected an integer, got {value!r}", path) from None
        if float(out) != float(value):
            raise self.fail(f"expected an integer, got {value!r}", path)
        if out < minimum:
            raise self.fail(f"must be >= {minimum}, got {out}", path)
        return out

    def vector(self, value: Any, path: str) -> float | List[Any]:
        if isinstance(value, list):
            return [self.vector(v, f"{path}[{i}]") for i, v in enumerate(value)]
        return self.number(value, path)

    def choice(self, value: Any, options: Any, path: str) -> str:
        if not isinstance(value, str) or value not in options:
            raise self.fail(f"unknown kind {value!r}; expected one of {sorted(options)}", path)
        return str(value)

    def seed(self, value: Any, path: str) -> str:
        try:
            return f"0x{project_config.parse_seed(value):x}"
        except ValueError as exc:
            raise self.fail(str(exc), path) from None


def _numbers_in(value: Any) -> Any:
    """Coerce numeric-looking leaves of a kind-specific parameter block."""
    if isinstance(value, dict):
        return {k: _numbers_in(item) for k, item in value.items()}
    if isinstance(value, list):
        return [_numbers_in(item) for item in value]
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _resolve(data: Dict[str, Any], lines: Mapping[str, int]) -> Dict[str, Any]:
    v = _Validator(lines)
    for key in data:
        if key not in TOP_LEVEL_KEYS:
            raise v.fail(f"unknown top-level key {key!r}", str(key))
    version = v.integer(data.get("schema_version", project_config.SCHEMA_VERSION), "schema_version", 1)
    if version != project_config.SCHEMA_VERSION:
        raise v.fail(f"unsupported schema_version {version}; expected {project_config.SCHEMA_VERSION}", "schema_version")
    name = data.get("name")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        raise v.fail("name must be a non-empty string without path separators", "name")
    experiment = v.choice(data.get("experiment"), EXPERIMENTS, "experiment")

    space = v.mapping(data.get("space"), "space")
    space_kind = v.choice(space.get("kind", "euclidean"), builders.SPACES, "space.kind")
    resolved_space: Dict[str, Any] = {"kind": space_kind}
    if space_kind == "euclidean":
        resolved_space["dim"] = v.integer(space.get("dim", 1), "space.dim", 1)
        if space.get("weights") is not None:
            resolved_space["weights"] = v.vector(space["weights"], "space.weights")
    else:
        resolved_space["n_cells"] = v.integer(space.get("n_cells"), "space.n_cells", 2)
        resolved_space["smoothing"] = v.number(space.get("smoothing", 0.0), "space.smoothing", minimum=0.0)

    operator = v.mapping(data.get("operator"), "operator", required=True)
    operator = builders.validate_operator(operator, v, "operator")

    constants = v.mapping(data.get("constants"), "constants")
    resolved_constants: Dict[str, float] = {}
    for key, value in constants.items():
        if key not in CONSTANT_KEYS:
            raise v.fail(f"unknown constant {key!r}; expected one of {list(CONSTANT_KEYS)}", f"constants.{key}")
        minimum = 0.0 if key in NONNEGATIVE_CONSTANTS else None
        resolved_constants[key] = v.number(value, f"constants.{key}", minimum=minimum)

    inputs = v.mapping(data.get("input"), "input")
    resolved_input: Dict[str, Any] = {
        "u0": v.vector(inputs.get("u0", 0.0), "input.u0"),
        "f": v.vector(inputs.get("f", 0.0), "input.f"),
    }
    M = v.mapping(inputs.get("M"), "input.M")
    resolved_input["M"] = builders.validate_input_path(M, v, "input.M")
    if inputs.get("drift") is not None:
        resolved_input["drift"] = builders.validate_drift(v.mapping(inputs["drift"], "input.drift"), v, "input.drift")
    if inputs.get("v0") is not None:
        resolved_input["v0"] = v.vector(inputs["v0"], "input.v0")
    for key in inputs:
        if key not in ("u0", "f", "M", "drift", "v0"):
            raise v.fail(f"unknown input key {key!r}", f"input.{key}")

    noise = None
    if data.get("noise") is not None:
        noise = builders.validate_noise(v.mapping(data["noise"], "noise"), v, "noise")
    elif experiment in NOISE_REQUIRED:
        raise v.fail(f"experiment {experiment} needs a noise section", "noise")

    grid = v.mapping(data.get("grid"), "grid", required=experiment != "Audit")
    resolved_grid = {
        "T": v.number(grid.get("T", 1.0), "grid.T", positive=True),
        "steps": v.integer(grid.get("steps", 100), "grid.steps", 1),
    }

    ensemble = v.mapping(data.get("ensemble"), "ensemble")
    resolved_ensemble: Dict[str, Any] = {"n_paths": v.integer(ensemble.get("n_paths", 1), "ensemble.n_paths", 1)}
    needs_seed = noise is not None or resolved_input["M"]["kind"] == "wiener"
    if ensemble.get("seed") is not None:
        resolved_ensemble["seed"] = v.seed(ensemble["seed"], "ensemble.seed")
    elif needs_seed:
        raise v.fail("stochastic scenarios need a seed", "ensemble.seed")

    solver = v.mapping(data.get("solver"), "solver")
    resolved_solver = builders.validate_solver(solver, v, "solver", stochastic=noise is not None)

    tolerances = v.mapping(data.get("tolerances"), "tolerances")
    resolved_tol = dict(DEFAULT_TOLERANCES)
    for key, value in tolerances.items():
        resolved_tol[str(key)] = v.number(value, f"tolerances.{key}", minimum=0.0)

    params = _numbers_in(v.mapping(data.get("params"), "params"))

    audit = data.get("audit")
    resolved_audit = None
    if audit is not None or experiment == "Audit":
        audit = v.mapping(audit, "audit")
        resolved_audit = {
            "h0": v.vector(audit.get("h0", 0.0), "audit.h0"),
            "r0": v.number(audit.get("r0", 1.0), "audit.r0", minimum=0.0),
            "a1": v.number(audit.get("a1", 0.0), "audit.a1"),
            "a2": v.number(audit.get("a2", 0.0), "audit.a2"),
            "n_samples": v.integer(audit.get("n_samples", 1000), "audit.n_samples", 1),
        }

    output = v.mapping(data.get("output"), "output")
    out_dir = output.get("dir", project_config.DEFAULT_OUTPUT_DIR.name)
    if not isinstance(out_dir, str) or not out_dir:
        raise v.fail("output.dir must be a path string", "output.dir")

    resolved = {
        "schema_version": version,
        "name": name,
        "experiment": experiment,
        "space": resolved_space,
        "operator": operator,
        "constants": resolved_constants,
        "input": resolved_input,
        "noise": noise,
        "grid": resolved_grid,
        "ensemble": resolved_ensemble,
        "solver": resolved_solver,
        "tolerances": resolved_tol,
        "params": params,
        "audit": resolved_audit,
        "output": {"dir": out_dir},
    }
    return to_builtin(resolved)


def apply_overrides(
    data: Dict[str, Any],
    out: str | Path | None = None,
    seed: str | int | None = None,
    paths: int | None = None,
    steps: int | None = None,
) -> Dict[str, Any]:
    """Copy of raw scenario data with command-line overrides written into it."""
    data = copy.deepcopy(data)
    if out is not None:
        data.setdefault("output", {})
        data["output"] = {**(data["output"] or {}), "dir": str(out)}
    if seed is not None:
        data["ensemble"] = {**(data.get("ensemble") or {}), "seed": seed}
    if paths is not None:
        data["ensemble"] = {**(data.get("ensemble") or {}), "n_paths": paths}
    if steps is not None:
        data["grid"] = {**(data.get("grid") or {}), "steps": steps}
    return data


def read_scenario_data(path: Path) -> tuple[Dict[str, Any], Dict[str, int]]:
    """Raw mapping and line index of a scenario or summary file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Scenario file not found: {path}")
    text = path.read_text()
    lines: Dict[str, int] = {}
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            lines = _line_index(node) if node is not None else {}
            data = yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else getattr(exc, "lineno", None)
        raise ConfigError(f"Cannot parse {path.name}: {exc}", None, line) from None
    if not isinstance(data, dict):
        raise ConfigError(f"Expected a mapping at the top of {path.name}, got {type(data).__name__}")
    if isinstance(data.get("config"), dict) and "checks" in data:
        # summary written by the runner
        return data["config"], {}
    return data, lines


def load_scenario(
    path: str | Path,
    out: str | Path | None = None,
    seed: str | int | None = None,
    paths: int | None = None,
    steps: int | None = None,
) -> Scenario:
    path = Path(path)
    data, lines = read_scenario_data(path)
    data = apply_overrides(data, out=out, seed=seed, paths=paths, steps=steps)
    return Scenario(config=_resolve(data, lines), source=path, lines=lines)


def scenario_from_dict(data: Dict[str, Any]) -> Scenario:
    """Validate an in-memory scenario mapping (no line information)."""
    return Scenario(config=_resolve(copy.deepcopy(data), {}), source=None, lines={})
