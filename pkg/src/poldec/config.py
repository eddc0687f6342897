"""Run configuration: flat ``key = value`` files with a typed schema.

Example file::

    # grid
    h = 0.005
    points = 15
    max_policy_iterations = 30
    # search
    population_size = 60

Values are validated against :data:`SCHEMA`; unknown keys are errors.
Command-line ``--set key=value`` pairs use the same parser.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .grid import GridSpec

__all__ = [
    "SCHEMA",
    "GRID_KEYS",
    "ConfigError",
    "RunConfig",
    "parse_value",
    "parse_config_text",
    "load_config_file",
    "apply_grid_overrides",
    "config_digest",
    "output_path",
    "OUTPUT_DIR_ENV",
]

OUTPUT_DIR_ENV = "POLDEC_OUTPUT_DIR"


class ConfigError(ValueError):
    """A configuration key or value is not acceptable."""


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _int_list(text: str) -> list[int]:
    vals = [int(p) for p in text.replace(",", " ").split()]
    if not vals or min(vals) < 1:
        raise ValueError("must be one or more positive integers")
    return vals


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "") else _positive_float(text)


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise ValueError("must lie strictly between 0 and 1")
    return v


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text

    return parse


SCHEMA: dict[str, Callable[[str], Any]] = {
    # grid and policy iteration
    "h": _positive_float,
    "max_step": _optional_float,
    "points": _int_list,
    "samples": _int_list,
    "max_policy_iterations": _positive_int,
    "max_evaluation_sweeps": _positive_int,
    "tolerance": _positive_float,
    "flop_eval": _positive_float,
    "flop_update": _positive_float,
    "decoupled_inputs": _choice("trim", "zero"),
    # search
    "population_size": _positive_int,
    "elite_fraction": _fraction,
    "tournament_size": _positive_int,
    "max_children": _positive_int,
    "batch_size": _positive_int,
    # simulation
    "duration": _positive_float,
    "dt": _positive_float,
    "convergence_tolerance": _positive_float,
}

GRID_KEYS = ("h", "max_step", "points", "samples", "max_policy_iterations", "max_evaluation_sweeps",
             "tolerance", "flop_eval", "flop_update")


def parse_value(key: str, text: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}; known keys: {', '.join(sorted(SCHEMA))}")
    try:
        return SCHEMA[key](text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r} for {key}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        out[key] = parse_value(key, val)
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    return parse_config_text(Path(path).read_text(), str(path))


def apply_grid_overrides(grid: GridSpec, values: dict[str, Any]) -> GridSpec:
    """Grid with the grid-related keys of ``values`` applied."""
    changes: dict[str, Any] = {}
    for key in GRID_KEYS:
        if key not in values:
            continue
        val = values[key]
        if key == "points":
            val = _broadcast(val, grid.n, key)
            changes["state_points"] = val
        elif key == "samples":
            changes["input_samples"] = _broadcast(val, grid.m, key)
        else:
            changes[key] = val
    try:
        return grid.with_(**changes) if changes else grid
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _broadcast(vals: list[int], size: int, key: str) -> list[int]:
    if len(vals) == 1:
        return vals * size
    if len(vals) != size:
        raise ConfigError(f"{key} needs 1 or {size} values, got {len(vals)}")
    return vals


@dataclass
class RunConfig:
    model: str | None = None
    method: str | None = None
    seed: int = 0
    budget_seconds: float | None = None
    budget_steps: int | None = None
    budget_evaluations: int | None = None
    workers: int = 1
    values: dict[str, Any] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    verbosity: int = 0

    @property
    def deterministic(self) -> bool:
        return self.workers == 1

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "method": self.method,
            "seed": self.seed,
            "budget_seconds": self.budget_seconds,
            "budget_steps": self.budget_steps,
            "budget_evaluations": self.budget_evaluations,
            "workers": self.workers,
            "values": self.values,
        }


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def output_path(path: str | Path) -> Path:
    """Resolve a relative output path against the output-directory variable, if set."""
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
