"""Trajectory interpolation and the three-loop cascade simulator.

Loop structure, outermost first: position error through a P controller
adds a speed correction to the interpolated speed reference; the speed
error (in motor shaft rad/s) runs through a PI controller to produce the
current reference; the current error runs through the fixed drive PID to
produce the armature voltage, clamped at the supply limit.  Feedback for
the outer loops comes from the motor encoder, converted to linear units by
the screw lead; load-side signals are logged alongside.

The position and speed loops execute once per `outer_divisor` plant steps
(the PLC cycle); the current controller and plant run at the base rate.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .plant import PlantParameters, build_plant_state_space, discretize_zoh

__all__ = [
    "ControllerGains",
    "MotionCommand",
    "TrajectoryReference",
    "OperatingMode",
    "SimulationTrace",
    "SimOptions",
    "interpolate",
    "pi_step",
    "pid_step",
    "simulate_closed_loop",
    "run_cascade",
    "write_trace_csv",
    "read_trace_csv",
]

TRACE_CSV_HEADER = ["t", "pos_ref", "spd_ref", "pos", "spd", "i_a", "v_a"]


@dataclass(frozen=True)
class ControllerGains:
    """Tunable outer-loop gains plus the fixed drive current-loop PID."""

    K_p: float = 0.0    # position P gain [1/s]
    K_v: float = 0.0    # speed proportional gain [A/(rad/s)]
    K_i: float = 0.0    # speed integral gain [A/rad]
    K_cp: float = 60.0  # current loop P
    K_ci: float = 1000.0  # current loop I
    K_cd: float = 18.0  # current loop D term (see SimOptions.literal_kcd)

    def __post_init__(self):
        for name in ("K_p", "K_v", "K_i"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"gains.{name} must be nonnegative")

    def with_outer(self, K_p=None, K_v=None, K_i=None) -> "ControllerGains":
        return replace(
            self,
            K_p=self.K_p if K_p is None else K_p,
            K_v=self.K_v if K_v is None else K_v,
            K_i=self.K_i if K_i is None else K_i,
        )


@dataclass(frozen=True)
class MotionCommand:
    """Inputs of the interpolation block (all strictly positive)."""

    position: float     # set point [m]
    speed: float        # set point [m/s]
    acceleration: float  # [m/s^2]
    deceleration: float  # [m/s^2]

    def __post_init__(self):
        for name in ("position", "speed", "acceleration", "deceleration"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"motion.{name} must be strictly positive")


@dataclass(frozen=True)
class TrajectoryReference:
    """Sampled reference profile; position is the trapezoidal integral of speed."""

    dt: float
    position: np.ndarray
    speed: np.ndarray
    accel_end: float    # time the speed reference first reaches its plateau [s]
    cruise_end: float   # time the speed reference leaves its plateau [s]
    motion_end: float   # time the speed reference returns to zero [s]

    @property
    def duration(self) -> float:
        return self.position.size * self.dt


class OperatingMode(enum.Enum):
    POSITION = "position"
    SPEED = "speed"
    CURRENT = "current"


@dataclass
class SimulationTrace:
    """Uniformly sampled closed-loop run.

    pos/spd are the measured (motor-encoder) channels used for feedback and
    metrics; the load side is logged in pos_load/spd_load.
    """

    dt: float
    pos_ref: np.ndarray
    spd_ref: np.ndarray
    pos: np.ndarray
    spd: np.ndarray
    i_a: np.ndarray
    v_a: np.ndarray
    pos_load: np.ndarray | None = None
    spd_load: np.ndarray | None = None
    unstable: bool = False
    speed_alarm: bool = False
    accel_end: float | None = None
    cruise_end: float | None = None
    motion_end: float | None = None

    def __post_init__(self):
        n = self.pos_ref.size
        for name in ("spd_ref", "pos", "spd", "i_a", "v_a"):
            if getattr(self, name).size != n:
                raise ValueError(f"trace array {name} length mismatch")
        if not self.dt > 0.0:
            raise ValueError("trace dt must be positive")

    @property
    def duration(self) -> float:
        return self.pos_ref.size * self.dt

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.pos_ref.size) * self.dt


@dataclass(frozen=True)
class SimOptions:
    """Simulator configuration that is not part of the tuning problem."""

    dt: float = 1e-5            # plant / current-loop sample period [s]
    outer_divisor: int = 20     # outer loops run every this many plant steps
    v_max: float = 560.0        # armature voltage clamp [V]
    settle_time: float = 1.0    # zero-speed padding after the move [s]
    literal_kcd: bool = True    # True: K_cd adds to K_cp (as printed on the
    #                             nameplate controller); False: filtered derivative
    n_f: float = 10.0           # derivative filter time constant, in units of dt

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("sim.dt must be positive")
        if self.outer_divisor < 1:
            raise ValueError("sim.outer_divisor must be >= 1")
        if not self.v_max > 0.0:
            raise ValueError("sim.v_max must be positive")
        if self.settle_time < 0.0:
            raise ValueError("sim.settle_time must be nonnegative")


def interpolate(cmd: MotionCommand, dt: float, settle_time: float = 1.0) -> TrajectoryReference:
    """Generate the trapezoidal speed profile and its position integral.

    Ramps up at cmd.acceleration to the speed set point, cruises, ramps
    down at cmd.deceleration so the travelled distance equals the position
    set point; degenerates to a triangle when the move is too short to
    reach the set speed.  A zero-speed settle window is appended.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if settle_time < 0.0:
        raise ValueError("settle_time must be nonnegative")
    d, v = cmd.position, cmd.speed
    a, b = cmd.acceleration, cmd.deceleration
    ramp_dist = 0.5 * v * v * (1.0 / a + 1.0 / b)
    if d >= ramp_dist:
        v_pk = v
        t_cruise = (d - ramp_dist) / v
    else:
        v_pk = math.sqrt(2.0 * d / (1.0 / a + 1.0 / b))
        t_cruise = 0.0
    t_acc = v_pk / a
    t_dec = v_pk / b
    t_motion = t_acc + t_cruise + t_dec
    nsteps = int(math.ceil((t_motion + settle_time) / dt)) + 1
    t = np.arange(nsteps) * dt

    speed = np.zeros(nsteps)
    m = t < t_acc
    speed[m] = a * t[m]
    m = (t >= t_acc) & (t < t_acc + t_cruise)
    speed[m] = v_pk
    m = (t >= t_acc + t_cruise) & (t < t_motion)
    speed[m] = v_pk - b * (t[m] - t_acc - t_cruise)
    speed = np.maximum(speed, 0.0)

    position = np.empty(nsteps)
    position[0] = 0.0
    np.cumsum(0.5 * dt * (speed[1:] + speed[:-1]), out=position[1:])
    return TrajectoryReference(
        dt=dt,
        position=position,
        speed=speed,
        accel_end=t_acc,
        cruise_end=t_acc + t_cruise,
        motion_end=t_motion,
    )


@dataclass(frozen=True)
class PiState:
    """Integrator state of a PI controller (trapezoidal accumulation)."""

    integral: float = 0.0
    prev_error: float = 0.0


@dataclass(frozen=True)
class PidState:
    """PI state plus the filtered-derivative memory."""

    integral: float = 0.0
    prev_error: float = 0.0
    d_filt: float = 0.0


def pi_step(state: PiState, error: float, k_prop: float, k_int: float,
            dt: float, freeze: bool = False):
    """One PI update; returns (output, new state).

    With freeze=True the integrator holds its value (anti-windup while the
    downstream actuator is saturated) but the error memory still advances.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    integral = state.integral
    if not freeze:
        integral = integral + 0.5 * dt * (error + state.prev_error)
    out = k_prop * error + k_int * integral
    return out, PiState(integral=integral, prev_error=error)


def pid_step(state: PidState, error: float, k_prop: float, k_int: float,
             k_deriv: float, dt: float, n_f: float = 10.0, freeze: bool = False):
    """One PID update with a filtered backward-difference derivative.

    The derivative is first-order filtered with time constant n_f * dt.
    Returns (output, new state).
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    integral = state.integral
    if not freeze:
        integral = integral + 0.5 * dt * (error + state.prev_error)
    tau = n_f * dt
    alpha = tau / (tau + dt)
    d_filt = alpha * state.d_filt + (1.0 - alpha) * (error - state.prev_error) / dt
    out = k_prop * error + k_int * integral + k_deriv * d_filt
    return out, PidState(integral=integral, prev_error=error, d_filt=d_filt)


def _effective_gains(g: ControllerGains, mode: OperatingMode) -> ControllerGains:
    if mode is OperatingMode.SPEED:
        return g.with_outer(K_p=0.0)
    if mode is OperatingMode.CURRENT:
        return g.with_outer(K_p=0.0, K_v=0.0, K_i=0.0)
    return g


def run_cascade(p: PlantParameters, g: ControllerGains, pos_ref: np.ndarray,
                spd_ref: np.ndarray, mode: OperatingMode, opts: SimOptions,
                i_ref: np.ndarray | None = None,
                tau_l: np.ndarray | None = None,
                traj: TrajectoryReference | None = None) -> SimulationTrace:
    """Run the cascade over explicit reference arrays (one plant-rate sample each).

    This is the array-level entry used by the tuners; simulate_closed_loop
    wraps it with the interpolation block.
    """
    nsteps = pos_ref.size
    if spd_ref.size != nsteps:
        raise ValueError("reference arrays must have equal length")
    eff = _effective_gains(g, mode)
    dss = discretize_zoh(build_plant_state_space(p), opts.dt)
    if i_ref is None:
        i_ref = np.zeros(nsteps)
    if tau_l is None:
        tau_l = np.zeros(nsteps)
    mode_id = {
        OperatingMode.POSITION: _kernels.MODE_POSITION,
        OperatingMode.SPEED: _kernels.MODE_SPEED,
        OperatingMode.CURRENT: _kernels.MODE_CURRENT,
    }[mode]
    pos, spd, ia, va, posl, spdl, n_valid, alarm = _kernels.cascade_loop(
        dss.Ad, np.ascontiguousarray(dss.Bd[:, 0]), np.ascontiguousarray(dss.Bd[:, 1]),
        np.ascontiguousarray(tau_l, dtype=float),
        np.ascontiguousarray(pos_ref, dtype=float),
        np.ascontiguousarray(spd_ref, dtype=float),
        np.ascontiguousarray(i_ref, dtype=float),
        mode_id, opts.dt, opts.outer_divisor,
        eff.K_p, eff.K_v, eff.K_i, eff.K_cp, eff.K_ci, eff.K_cd,
        opts.literal_kcd, opts.n_f, opts.v_max, p.lead_per_rad, p.omega_max,
    )
    unstable = n_valid < nsteps
    sl = slice(0, n_valid)
    return SimulationTrace(
        dt=opts.dt,
        pos_ref=pos_ref[sl].copy(), spd_ref=spd_ref[sl].copy(),
        pos=pos[sl], spd=spd[sl], i_a=ia[sl], v_a=va[sl],
        pos_load=posl[sl], spd_load=spdl[sl],
        unstable=unstable, speed_alarm=bool(alarm),
        accel_end=traj.accel_end if traj else None,
        cruise_end=traj.cruise_end if traj else None,
        motion_end=traj.motion_end if traj else None,
    )


def simulate_closed_loop(p: PlantParameters, g: ControllerGains, cmd: MotionCommand,
                         mode: OperatingMode, opts: SimOptions | None = None,
                         duration: float | None = None,
                         current_setpoint: float = 0.0) -> SimulationTrace:
    """Closed-loop run of the interpolated motion command in the given mode.

    In current mode the outer loops are disabled and `current_setpoint`
    drives the current reference directly.  `duration`, when given, must
    cover at least the interpolated profile; the trace is padded or cut to
    it.  Deterministic: identical inputs produce identical traces.
    """
    opts = opts or SimOptions()
    traj = interpolate(cmd, opts.dt, settle_time=opts.settle_time)
    nsteps = traj.position.size
    if duration is not None:
        want = int(round(duration / opts.dt))
        if duration < traj.motion_end:
            raise ValueError("duration shorter than the interpolated profile")
        if want > nsteps:
            pad = want - nsteps
            traj = replace(
                traj,
                position=np.concatenate([traj.position, np.full(pad, traj.position[-1])]),
                speed=np.concatenate([traj.speed, np.zeros(pad)]),
            )
        else:
            traj = replace(traj, position=traj.position[:want], speed=traj.speed[:want])
        nsteps = traj.position.size
    i_ref = None
    if mode is OperatingMode.CURRENT:
        i_ref = np.full(nsteps, float(current_setpoint))
    return run_cascade(p, g, traj.position, traj.speed, mode, opts, i_ref=i_ref, traj=traj)


def simulate_closed_loop_reference(p: PlantParameters, g: ControllerGains,
                                   pos_ref: np.ndarray, spd_ref: np.ndarray,
                                   mode: OperatingMode, opts: SimOptions) -> SimulationTrace:
    """Pure-Python twin of run_cascade built from the controller primitives.

    Kept as an independent route for verifying the compiled kernel; far too
    slow for tuning sweeps.
    """
    from .plant import step_state

    nsteps = pos_ref.size
    eff = _effective_gains(g, mode)
    dss = discretize_zoh(build_plant_state_space(p), opts.dt)
    lead = p.lead_per_rad
    x = np.zeros(5)
    pi_s = PiState()
    pid_c = PidState()
    i_ref = 0.0
    sat_dir = 0.0
    pos = np.zeros(nsteps)
    spd = np.zeros(nsteps)
    ia = np.zeros(nsteps)
    va = np.zeros(nsteps)
    for k in range(nsteps):
        w_m = x[1]
        pos_m = x[4] * lead
        if mode is OperatingMode.CURRENT:
            i_ref = 0.0
        elif k % opts.outer_divisor == 0:
            e_p = pos_ref[k] - pos_m
            e_s = (spd_ref[k] + eff.K_p * e_p) / lead - w_m
            freeze = sat_dir != 0.0 and e_s * sat_dir >= 0.0
            i_ref, pi_s = pi_step(pi_s, e_s, eff.K_v, eff.K_i,
                                  opts.dt * opts.outer_divisor, freeze=freeze)
        e_c = i_ref - x[0]
        freeze = sat_dir != 0.0 and e_c * sat_dir >= 0.0
        if opts.literal_kcd:
            v, new_pi = pi_step(PiState(pid_c.integral, pid_c.prev_error), e_c,
                                eff.K_cp + eff.K_cd, eff.K_ci, opts.dt, freeze=freeze)
            pid_c = PidState(new_pi.integral, new_pi.prev_error, 0.0)
        else:
            v, pid_c = pid_step(pid_c, e_c, eff.K_cp, eff.K_ci, eff.K_cd,
                                opts.dt, n_f=opts.n_f, freeze=freeze)
        if v > opts.v_max:
            v, sat_dir = opts.v_max, 1.0
        elif v < -opts.v_max:
            v, sat_dir = -opts.v_max, -1.0
        else:
            sat_dir = 0.0
        pos[k] = pos_m
        spd[k] = w_m * lead
        ia[k] = x[0]
        va[k] = v
        x, _ = step_state(dss, x, np.array([v, 0.0]))
    return SimulationTrace(dt=opts.dt, pos_ref=pos_ref.copy(), spd_ref=spd_ref.copy(),
                           pos=pos, spd=spd, i_a=ia, v_a=va)


def write_trace_csv(trace: SimulationTrace, path) -> None:
    """Write the canonical trace schema: t,pos_ref,spd_ref,pos,spd,i_a,v_a (SI)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_CSV_HEADER)
        t = trace.t
        for k in range(t.size):
            w.writerow([repr(float(c)) for c in (
                t[k], trace.pos_ref[k], trace.spd_ref[k], trace.pos[k],
                trace.spd[k], trace.i_a[k], trace.v_a[k])])


def read_trace_csv(path) -> SimulationTrace:
    data = np.genfromtxt(path, delimiter=",", names=True)
    t = np.atleast_1d(data["t"])
    if t.size < 2:
        raise ValueError("trace CSV needs at least two samples")
    dt = float(t[1] - t[0])
    get = lambda name: np.atleast_1d(data[name]).astype(float)
    return SimulationTrace(dt=dt, pos_ref=get("pos_ref"), spd_ref=get("spd_ref"),
                           pos=get("pos"), spd=get("spd"), i_a=get("i_a"), v_a=get("v_a"))
