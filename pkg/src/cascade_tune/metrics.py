"""Per-run performance indicators and the weighted tuning costs.

Conventions (documented because the weights are applied as published):
overshoots are fractions of the set point, times are seconds, the ITAE
term integrates time-weighted absolute speed error only after the motion
completes, and the tracking error norms are plain infinity norms over the
whole trace.  Settling is a 2% band.

Windowing: each settling time is measured from the instant the reference
arrives at the value being settled onto -- the end of the acceleration
ramp for the speed plateau, motion completion for the position set point.
Measured from the move start both would be dominated by the profile
duration, a candidate-independent offset that hides the loop response.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import SimulationTrace

__all__ = [
    "SpeedMetrics",
    "PositionMetrics",
    "CostWeights",
    "settling_time",
    "overshoot",
    "itae_after_motion",
    "inf_norm_error",
    "speed_metrics",
    "position_metrics",
    "speed_cost",
    "position_cost",
]

SETTLING_BAND = 0.02
DEFAULT_PENALTY = 1e6


@dataclass(frozen=True)
class SpeedMetrics:
    """[settling time, overshoot, after-motion ITAE, Linf speed error]."""

    T_s: float
    h_s: float
    e_itae: float
    e_inf: float

    def as_array(self) -> np.ndarray:
        return np.array([self.T_s, self.h_s, self.e_itae, self.e_inf])


@dataclass(frozen=True)
class PositionMetrics:
    """[settling time, position overshoot, speed overshoot, Linf position error]."""

    T_p: float
    h_p: float
    h_ps: float
    e_inf: float

    def as_array(self) -> np.ndarray:
        return np.array([self.T_p, self.h_p, self.h_ps, self.e_inf])


@dataclass(frozen=True)
class CostWeights:
    """Weights of the two weighted-sum costs (published defaults)."""

    gamma_s: tuple = (500.0, 2.0, 1e4, 500.0)
    gamma_p: tuple = (1e4, 10.0, 15.0, 100.0)
    penalty: float = DEFAULT_PENALTY

    def __post_init__(self):
        if len(self.gamma_s) != 4 or len(self.gamma_p) != 4:
            raise ValueError("weights.gamma_s/gamma_p must each hold four entries")
        if any(w <= 0.0 for w in tuple(self.gamma_s) + tuple(self.gamma_p)):
            raise ValueError("cost weights must be strictly positive")


def settling_time(signal: np.ndarray, reference: float, band: float, dt: float) -> float:
    """Last time the signal sits outside the +-band*|reference| tube.

    Time is counted from the start of the given series (the caller slices
    the series so it starts at the relevant step).  Returns the series
    duration when the signal is still outside the band at the end.
    """
    signal = np.asarray(signal, dtype=float)
    if signal.size == 0:
        raise ValueError("empty signal")
    if reference == 0.0:
        raise ValueError("settling reference must be nonzero")
    tol = band * abs(reference)
    outside = np.abs(signal - reference) > tol
    if not outside.any():
        return 0.0
    last = int(np.nonzero(outside)[0][-1])
    if last == signal.size - 1:
        return signal.size * dt
    return (last + 1) * dt


def overshoot(signal: np.ndarray, reference: float) -> float:
    """Peak excursion above the reference as a fraction of |reference|."""
    if reference == 0.0:
        raise ValueError("overshoot reference must be nonzero")
    signal = np.asarray(signal, dtype=float)
    return max(0.0, (signal.max() - reference) / abs(reference))


def itae_after_motion(error: np.ndarray, dt: float, motion_end: float) -> float:
    """Integral of (t - t_end)*|e| over t >= t_end, time re-zeroed at t_end."""
    error = np.asarray(error, dtype=float)
    k0 = int(round(motion_end / dt))
    if k0 > error.size:
        raise ValueError("motion end beyond the trace")
    tail = np.abs(error[k0:])
    t = np.arange(tail.size) * dt
    return float(np.sum(t * tail) * dt)


def inf_norm_error(reference: np.ndarray, signal: np.ndarray) -> float:
    reference = np.asarray(reference, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if reference.size != signal.size:
        raise ValueError("series length mismatch")
    return float(np.abs(reference - signal).max())


def _profile_times(trace: SimulationTrace):
    """Profile timing (accel end, cruise end, motion end), from metadata or spd_ref."""
    if trace.motion_end is not None:
        return trace.accel_end, trace.cruise_end, trace.motion_end
    spd_ref = trace.spd_ref
    v_set = spd_ref.max()
    if v_set <= 0.0:
        return 0.0, trace.duration, trace.duration
    at_set = np.nonzero(spd_ref == v_set)[0]
    moving = np.nonzero(spd_ref > 0.0)[0]
    return (at_set[0] * trace.dt, (at_set[-1] + 1) * trace.dt,
            (moving[-1] + 1) * trace.dt)


def speed_metrics(trace: SimulationTrace, band: float = SETTLING_BAND) -> SpeedMetrics:
    """Extract the four speed indicators from a speed-mode trace.

    Settling is judged over [ramp end, cruise end] against the speed set
    point; overshoot over [0, cruise end] so ramp-transient peaks count.
    """
    t_acc, t_cruise_end, t_motion = _profile_times(trace)
    v_set = float(trace.spd_ref.max())
    k_acc = int(round(t_acc / trace.dt))
    k_cr = max(k_acc + 1, int(round(t_cruise_end / trace.dt)))
    T_s = settling_time(trace.spd[k_acc:k_cr], v_set, band, trace.dt)
    h_s = overshoot(trace.spd[:k_cr], v_set)
    e_itae = itae_after_motion(trace.spd_ref - trace.spd, trace.dt, t_motion)
    e_inf = inf_norm_error(trace.spd_ref, trace.spd)
    return SpeedMetrics(T_s=T_s, h_s=h_s, e_itae=e_itae, e_inf=e_inf)


def position_metrics(trace: SimulationTrace, band: float = SETTLING_BAND) -> PositionMetrics:
    """Extract the four position indicators from a position-mode trace.

    Settling is measured from motion completion (when the reference
    reaches the set point); overshoots over the whole trace.
    """
    _, _, t_motion = _profile_times(trace)
    p_set = float(trace.pos_ref[-1])
    v_set = float(trace.spd_ref.max())
    k_m = min(int(round(t_motion / trace.dt)), trace.pos.size - 1)
    T_p = settling_time(trace.pos[k_m:], p_set, band, trace.dt)
    h_p = overshoot(trace.pos, p_set)
    h_ps = overshoot(trace.spd, v_set) if v_set > 0.0 else 0.0
    e_inf = inf_norm_error(trace.pos_ref, trace.pos)
    return PositionMetrics(T_p=T_p, h_p=h_p, h_ps=h_ps, e_inf=e_inf)


def speed_cost(trace: SimulationTrace, w: CostWeights | None = None) -> float:
    """Weighted sum of the speed indicators; penalty for unstable traces."""
    w = w or CostWeights()
    if trace.unstable or not np.all(np.isfinite(trace.spd)):
        return w.penalty
    m = speed_metrics(trace)
    return float(np.dot(w.gamma_s, m.as_array()))


def position_cost(trace: SimulationTrace, w: CostWeights | None = None) -> float:
    """Weighted sum of the position indicators; penalty for unstable traces."""
    w = w or CostWeights()
    if trace.unstable or not np.all(np.isfinite(trace.pos)):
        return w.penalty
    m = position_metrics(trace)
    return float(np.dot(w.gamma_p, m.as_array()))
