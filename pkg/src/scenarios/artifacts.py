"""Artifact writers: series CSV, summary JSON and provenance, each written atomically."""

from __future__ import annotations

import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict

import pandas as pd

from src import __version__
from src import config as project_config
from src.analysis.reports import to_builtin
from src.scenarios.schema import Scenario

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())


def atomic_write_text(path: Path, text: str) -> Path:
    """Write to a temp file in the target directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def series_csv_text(frame: pd.DataFrame, digits: int | None = None) -> str:
    digits = project_config.FLOAT_DIGITS if digits is None else int(digits)
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=f"%.{digits}g", lineterminator="\n")
    return buffer.getvalue()


def json_text(payload: Dict[str, Any]) -> str:
    return json.dumps(to_builtin(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def provenance(scenario: Scenario) -> Dict[str, Any]:
    return {
        "config_sha256": scenario.config_hash(),
        "seed": scenario.seed,
        "version": __version__,
        "schema_version": scenario.config["schema_version"],
        "name": scenario.name,
    }


def write_artifacts(
    scenario: Scenario,
    summary: Dict[str, Any],
    series: pd.DataFrame | None = None,
    tables: Dict[str, pd.DataFrame] | None = None,
    out_dir: Path | None = None,
) -> Dict[str, Path]:
    """Write `<name>.series.csv`, `<name>.summary.json`, `<name>.provenance.json` and `<name>.<table>.csv`."""
    out_dir = Path(out_dir) if out_dir is not None else scenario.output_dir
    name = scenario.name
    written: Dict[str, Path] = {}
    if series is not None:
        if list(series.columns[:1]) != ["t"]:
            raise ValueError("series frames must start with the 't' column")
        written["series"] = atomic_write_text(out_dir / f"{name}.series.csv", series_csv_text(series))
    for key, frame in sorted((tables or {}).items()):
        written[key] = atomic_write_text(out_dir / f"{name}.{key}.csv", series_csv_text(frame))
    written["summary"] = atomic_write_text(out_dir / f"{name}.summary.json", json_text(summary))
    written["provenance"] = atomic_write_text(out_dir / f"{name}.provenance.json", json_text(provenance(scenario)))
    logger.info("Wrote %d artifacts for %s to %s", len(written), name, out_dir)
    return written
