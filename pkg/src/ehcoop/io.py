"""Config files, CSV tables and run manifests.

CSV cells are rendered with a fixed %.6g format and LF line endings so
repeated runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .model import ConfigError, ScenarioConfig, config_from_dict, config_to_dict

__all__ = ["format_float", "load_config", "report_to_dict", "tool_version",
           "write_csv", "write_manifest"]


def tool_version() -> str:
    try:
        from importlib.metadata import version
        return version("ehcoop")
    except Exception:
        return "0+unknown"


def load_config(path) -> ScenarioConfig:
    """Read a TOML scenario file; keys mirror ScenarioConfig fields."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(data)


def format_float(x) -> str:
    return format(float(x), ".6g")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_float(v)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_manifest(path, command: str, cfg: ScenarioConfig, master_seed,
                   outputs, duration_s: float):
    """Record what a CLI run did, next to its outputs."""
    doc = {
        "command": command,
        "config": config_to_dict(cfg),
        "master_seed": master_seed,
        "outputs": [str(o) for o in outputs],
        "duration_seconds": round(float(duration_s), 3),
        "version": tool_version(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _listify(obj):
    if isinstance(obj, np.ndarray):
        return [float(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    return obj


def report_to_dict(report) -> dict:
    """JSON-ready view of a solve report."""
    doc = {
        "objective": float(report.objective),
        "converged": bool(report.converged),
        "iterations": int(report.iterations),
        "cooperation_successful": bool(report.cooperation_successful),
        "max_residual": float(report.max_residual),
        "effective_primary_avg_rate": float(report.effective_primary_avg_rate()),
        "policy": _listify(asdict(report.policy)),
        "duals": _listify(asdict(report.duals)),
        "rates": _listify(asdict(report.rates)),
        "residuals": _listify(asdict(report.residuals)),
        "baseline": _listify(asdict(report.baseline)),
    }
    return doc
