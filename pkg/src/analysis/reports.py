"""Verdict containers shared by every check in the package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List


def to_builtin(value: Any) -> Any:
    """Convert numpy scalars/arrays into JSON-friendly builtins."""
    if hasattr(value, "tolist"):
        value = value.tolist()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    return value


@dataclass
class CheckReport:
    """Single named verdict: `passed` iff `value` compares favourably with `threshold`."""

    name: str
    passed: bool
    value: float
    threshold: float
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": to_builtin(float(self.value)),
            "threshold": to_builtin(float(self.threshold)),
            "details": to_builtin(self.details),
        }


@dataclass
class EnsembleReport:
    """Monte Carlo estimates with standard errors and the checks built on them."""

    name: str
    n_paths: int
    estimates: Dict[str, float] = field(default_factory=dict)
    std_errors: Dict[str, float] = field(default_factory=dict)
    checks: List[CheckReport] = field(default_factory=list)
    runtime: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckReport:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(f"No check named {name!r} in report {self.name!r}")

    def to_dict(self) -> Dict[str, Any]:
        # runtime is left out so artifacts stay byte-identical across reruns
        return {
            "name": self.name,
            "n_paths": int(self.n_paths),
            "passed": self.passed,
            "estimates": to_builtin(self.estimates),
            "std_errors": to_builtin(self.std_errors),
            "checks": [c.to_dict() for c in self.checks],
            "details": to_builtin(self.details),
        }
