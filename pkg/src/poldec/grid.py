"""Grid and policy-iteration settings shared by the compute-cost model and the DP solver."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = ["GridSpec"]


def _arr(v, n=None) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if n is not None and a.size == 1 and n > 1:
        a = np.full(n, a[0])
    return a


@dataclass(frozen=True)
class GridSpec:
    """Per-state grid, per-input action lattice and policy-iteration limits.

    ``flop_eval`` and ``flop_update`` weight one evaluation sweep and one
    sampled action in the compute-cost model. ``h`` is the backup step; with
    ``max_step`` set, slow cells use a longer step (up to ``max_step``) so
    that each backup moves about one cell.
    """

    state_lower: np.ndarray
    state_upper: np.ndarray
    state_points: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray
    input_samples: np.ndarray
    h: float = 0.01
    discount: float = 1.0
    max_policy_iterations: int = 50
    max_evaluation_sweeps: int = 200
    tolerance: float = 1e-6
    flop_eval: float = 1.0
    flop_update: float = 1.0
    max_step: float | None = 0.5

    def __post_init__(self):
        n = np.asarray(self.state_points).size
        m = np.asarray(self.input_samples).size
        object.__setattr__(self, "state_lower", _arr(self.state_lower, n))
        object.__setattr__(self, "state_upper", _arr(self.state_upper, n))
        object.__setattr__(self, "state_points", _arr(self.state_points).astype(int))
        object.__setattr__(self, "input_lower", _arr(self.input_lower, m))
        object.__setattr__(self, "input_upper", _arr(self.input_upper, m))
        object.__setattr__(self, "input_samples", _arr(self.input_samples).astype(int))
        if not (self.state_lower.size == self.state_upper.size == n):
            raise ValueError("state bounds and point counts disagree in length")
        if not (self.input_lower.size == self.input_upper.size == m):
            raise ValueError("input limits and sample counts disagree in length")
        for name in ("state_lower", "state_upper", "input_lower", "input_upper"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if np.any(self.state_points < 2) or np.any(self.input_samples < 1):
            raise ValueError("need >= 2 grid points per state and >= 1 sample per input")
        if np.any(self.state_upper <= self.state_lower) or np.any(self.input_upper < self.input_lower):
            raise ValueError("upper bounds must exceed lower bounds")
        if self.h <= 0:
            raise ValueError("time step h must be positive")
        if self.max_step is not None and self.max_step < self.h:
            raise ValueError("max_step must be at least h")

    @property
    def n(self) -> int:
        return self.state_points.size

    @property
    def m(self) -> int:
        return self.input_samples.size

    def axes(self, states: Sequence[int]) -> list[np.ndarray]:
        return [np.linspace(self.state_lower[i], self.state_upper[i], self.state_points[i]) for i in states]

    def action_values(self, inputs: Sequence[int]) -> list[np.ndarray]:
        out = []
        for j in inputs:
            if self.input_samples[j] == 1:
                out.append(np.array([0.5 * (self.input_lower[j] + self.input_upper[j])]))
            else:
                out.append(np.linspace(self.input_lower[j], self.input_upper[j], self.input_samples[j]))
        return out

    def cells(self, states: Sequence[int]) -> int:
        return int(np.prod([int(self.state_points[i]) for i in states], dtype=object))

    def actions(self, inputs: Sequence[int]) -> int:
        return int(np.prod([int(self.input_samples[j]) for j in inputs], dtype=object))

    def with_(self, **changes) -> "GridSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "state_lower": self.state_lower.tolist(),
            "state_upper": self.state_upper.tolist(),
            "state_points": self.state_points.tolist(),
            "input_lower": self.input_lower.tolist(),
            "input_upper": self.input_upper.tolist(),
            "input_samples": self.input_samples.tolist(),
            "h": self.h,
            "discount": self.discount,
            "max_policy_iterations": self.max_policy_iterations,
            "max_evaluation_sweeps": self.max_evaluation_sweeps,
            "tolerance": self.tolerance,
            "flop_eval": self.flop_eval,
            "flop_update": self.flop_update,
            "max_step": self.max_step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)
