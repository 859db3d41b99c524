"""Declarative run description shared by the loader, the engine and the CLI."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .formation import BearingSpec
from .geom import boundary_layer_sign, sign_vec
from .laws import LeaderProfile, Obstacle

DEFAULT_STEP = 1e-3
DEFAULT_LAYER = 1e-4
CONVERGENCE_THRESHOLD = 1e-3
DWELL_STEPS = 50
COLLISION_THRESHOLD = 1e-6
BOUND_SLACK = 0.05


@dataclass(frozen=True)
class IntegratorSettings:
    step: float = DEFAULT_STEP
    end_time: float = 1.0
    mode: str = "raw_sign"
    layer_width: float = DEFAULT_LAYER
    stride: int = 1

    @property
    def n_steps(self) -> int:
        return int(round(self.end_time / self.step))

    def sign_fn(self):
        return sign_vec if self.mode == "raw_sign" else boundary_layer_sign(self.layer_width)

    def problems(self) -> list[str]:
        out = []
        if not self.step > 0:
            out.append(f"integrator step must be positive, got {self.step}")
            return out
        if self.end_time < self.step:
            out.append(f"end time {self.end_time} is shorter than one step {self.step}")
        elif abs(self.n_steps * self.step - self.end_time) > 1e-9 * max(1.0, self.end_time):
            out.append(f"end time {self.end_time} is not a whole number of steps of {self.step}")
        if self.mode not in ("raw_sign", "boundary_layer"):
            out.append(f"unknown discontinuity mode {self.mode!r}")
        if self.mode == "boundary_layer" and not self.layer_width > 0:
            out.append(f"boundary layer width must be positive, got {self.layer_width}")
        if self.stride < 1 or (self.n_steps > 0 and self.n_steps % self.stride):
            out.append(f"sampling stride {self.stride} must divide the step count {self.n_steps}")
        return out


@dataclass(frozen=True)
class Monitoring:
    convergence_threshold: float = CONVERGENCE_THRESHOLD
    dwell_steps: int = DWELL_STEPS
    collision_threshold: float = COLLISION_THRESHOLD
    bound_slack: float = BOUND_SLACK


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A fully validated scenario. Arrays are (n, d) with agent i in row i-1."""

    name: str
    spec: BearingSpec
    law: str
    alpha: float
    beta: float
    profile: LeaderProfile
    initial_positions: np.ndarray
    settings: IntegratorSettings
    initial_estimates: np.ndarray | None = None
    gamma: np.ndarray | None = None
    rho: float | None = None
    obstacle: Obstacle | None = None
    monitoring: Monitoring = field(default_factory=Monitoring)
    seed: int | None = None
    output_dir: Path | None = None
    source: dict = field(default_factory=dict, repr=False)

    @property
    def graph(self):
        return self.spec.graph

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def uses_estimator(self) -> bool:
        return self.law != "bearing_only"

    def with_settings(self, **changes) -> "ScenarioConfig":
        return replace(self, settings=replace(self.settings, **changes))
