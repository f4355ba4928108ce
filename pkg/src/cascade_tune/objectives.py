"""Shared tuning objectives: gains in, scalar cost out, memoized per node.

Every tuner (grid search, the Bayesian loop, ITAE) evaluates the same
closed-loop simulation through this layer, so repeat proposals cost
nothing and cross-method comparisons are guaranteed to score the same
surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import (ControllerGains, MotionCommand, OperatingMode,
                      SimOptions, interpolate, run_cascade)
from .metrics import CostWeights, position_cost, speed_cost
from .plant import PlantParameters

__all__ = ["TuningProblem"]


@dataclass
class TuningProblem:
    """Closed-loop evaluation context for one plant + command + weights."""

    plant: PlantParameters
    command: MotionCommand
    weights: CostWeights = field(default_factory=CostWeights)
    options: SimOptions = field(default_factory=SimOptions)
    base_gains: ControllerGains = field(default_factory=ControllerGains)

    def __post_init__(self):
        self._traj = interpolate(self.command, self.options.dt,
                                 settle_time=self.options.settle_time)
        self._cache: dict = {}
        self.evaluations = 0

    def _simulate(self, gains: ControllerGains, mode: OperatingMode):
        self.evaluations += 1
        return run_cascade(self.plant, gains, self._traj.position,
                           self._traj.speed, mode, self.options, traj=self._traj)

    def speed_trace(self, k_v: float, k_i: float):
        return self._simulate(self.base_gains.with_outer(K_v=k_v, K_i=k_i),
                              OperatingMode.SPEED)

    def position_trace(self, k_p: float, k_v: float, k_i: float):
        return self._simulate(self.base_gains.with_outer(K_p=k_p, K_v=k_v, K_i=k_i),
                              OperatingMode.POSITION)

    def speed_cost(self, k_v: float, k_i: float) -> float:
        """Speed-mode tuning cost at (K_v, K_i); cached by node."""
        key = ("s", float(k_v), float(k_i))
        if key not in self._cache:
            self._cache[key] = speed_cost(self.speed_trace(k_v, k_i), self.weights)
        return self._cache[key]

    def position_cost(self, k_p: float, k_v: float, k_i: float) -> float:
        """Position-mode tuning cost at K_p with the speed loop frozen; cached."""
        key = ("p", float(k_p), float(k_v), float(k_i))
        if key not in self._cache:
            self._cache[key] = position_cost(
                self.position_trace(k_p, k_v, k_i), self.weights)
        return self._cache[key]

    def speed_itae(self, k_v: float, k_i: float) -> float:
        """Whole-trace time-weighted absolute speed tracking error."""
        key = ("si", float(k_v), float(k_i))
        if key not in self._cache:
            tr = self.speed_trace(k_v, k_i)
            self._cache[key] = _whole_trace_itae(tr.spd_ref, tr.spd, tr.dt, tr.unstable,
                                                 self.weights.penalty)
        return self._cache[key]

    def position_itae(self, k_p: float, k_v: float, k_i: float) -> float:
        """Whole-trace time-weighted absolute position tracking error."""
        key = ("pi", float(k_p), float(k_v), float(k_i))
        if key not in self._cache:
            tr = self.position_trace(k_p, k_v, k_i)
            self._cache[key] = _whole_trace_itae(tr.pos_ref, tr.pos, tr.dt, tr.unstable,
                                                 self.weights.penalty)
        return self._cache[key]


def _whole_trace_itae(ref, sig, dt, unstable, penalty):
    if unstable or not np.all(np.isfinite(sig)):
        return penalty
    t = np.arange(ref.size) * dt
    return float(np.sum(t * np.abs(ref - sig)) * dt)
