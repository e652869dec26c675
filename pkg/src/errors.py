"""Exception types shared by operators, solvers and the scenario runner."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid scenario or settings content.

    `field` is the dotted path of the offending entry and `line` the 1-based
    line in the source file when known.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None) -> None:
        self.field = field
        self.line = line
        where = ""
        if field is not None:
            where += f" [field {field}]"
        if line is not None:
            where += f" [line {line}]"
        super().__init__(f"{message}{where}")


class StepSizeError(ValueError):
    """Time step or penalization parameter outside the admissible range."""


class DomainError(ValueError):
    """Point lies outside the (closure of the) operator domain."""


class ConvergenceError(RuntimeError):
    """Inner solver, Cauchy sequence or Picard iteration did not converge."""

    def __init__(self, message: str, diagnostics: dict | None = None) -> None:
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class BlowupError(RuntimeError):
    """Blow-up guard tripped during time stepping."""

    def __init__(self, message: str, diagnostics: dict | None = None) -> None:
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)
