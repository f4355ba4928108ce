"""Linear model of the motor + ball-screw axis and discretization primitives.

The drive is a permanent-magnet DC motor coupled to a ball screw.  The
electrical side is the usual armature circuit (R_a, L_a, back EMF K_b); the
mechanical side is a two-inertia torsion model (rotor J_m, load J_l, shaft
stiffness K_s, coupling damping B_ml).  Everything here is linear and
time-invariant, so simulation uses exact zero-order-hold discretization:
the shaft resonance sits around 1e6 rad/s at nominal stiffness and any
explicit integrator would need absurdly small steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

__all__ = [
    "PlantParameters",
    "TransferFunction",
    "StateSpace",
    "DiscreteStateSpace",
    "PlantState",
    "build_motor_tf",
    "build_axial_tf",
    "build_plant_tf",
    "build_two_mass_tf",
    "build_unapproximated_plant_tf",
    "build_plant_state_space",
    "tf_to_state_space",
    "tf_eval",
    "discretize_zoh",
    "step_state",
    "simulate_lti",
    "open_loop_step_trace",
    "fit_axial_stiffness",
]

RPM_TO_RAD_S = 2.0 * math.pi / 60.0


@dataclass(frozen=True)
class PlantParameters:
    """Electrical and mechanical constants of the axis (SI units).

    L_a is interpreted as henries and B_m as N·m·s/rad even though the
    nameplate data sheet omits the units; see the config docs.
    """

    R_a: float = 9.02          # armature resistance [ohm]
    L_a: float = 0.0187        # armature inductance [H]
    K_t: float = 0.515         # torque constant [N·m/A]
    K_b: float = 0.55          # back-EMF constant [V·s/rad]
    J_m: float = 0.27e-4       # rotor inertia [kg·m^2]
    B_m: float = 0.0074        # motor damping [N·m·s/rad]
    J_l: float = 6.53e-4       # load inertia [kg·m^2]
    B_ml: float = 0.014        # coupling damping [N·m·s/rad]
    B_l: float = 0.0           # load damping, negligible by design [N·m·s/rad]
    K_s: float = 3.0e7         # axial (torsional) stiffness [N·m/rad]
    Q: float = 0.018           # ball-screw lead [m/rev]
    omega_max: float = 8000.0 * RPM_TO_RAD_S  # speed alarm threshold [rad/s]

    def __post_init__(self):
        for name in ("R_a", "L_a", "K_t", "K_b", "J_m", "J_l", "K_s", "Q", "omega_max"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"plant.{name} must be strictly positive")
        for name in ("B_m", "B_ml", "B_l"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"plant.{name} must be nonnegative")

    @property
    def lead_per_rad(self) -> float:
        """Linear travel per radian of shaft rotation [m/rad]."""
        return self.Q / (2.0 * math.pi)

    def with_stiffness(self, K_s: float) -> "PlantParameters":
        return replace(self, K_s=K_s)


@dataclass(frozen=True)
class TransferFunction:
    """SISO rational transfer function, coefficients in descending powers of s."""

    num: tuple
    den: tuple

    def __post_init__(self):
        num = tuple(float(c) for c in self.num)
        den = tuple(float(c) for c in self.den)
        # strip leading zeros so degree checks are meaningful
        while len(num) > 1 and num[0] == 0.0:
            num = num[1:]
        while len(den) > 1 and den[0] == 0.0:
            den = den[1:]
        if not den or den[0] == 0.0:
            raise ValueError("leading denominator coefficient must be nonzero")
        if len(num) > len(den):
            raise ValueError("transfer function must be proper (deg num <= deg den)")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def __mul__(self, other: "TransferFunction") -> "TransferFunction":
        return TransferFunction(
            tuple(np.polymul(self.num, other.num)),
            tuple(np.polymul(self.den, other.den)),
        )

    def dc_gain(self) -> float:
        return self.num[-1] / self.den[-1]

    def poles(self) -> np.ndarray:
        return np.roots(self.den)


@dataclass(frozen=True)
class StateSpace:
    """Continuous-time state-space realization (A, B, C, D)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError("B/C dimensions inconsistent with A")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError("D dimensions inconsistent with B/C")
        for name, m in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, m)

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class DiscreteStateSpace:
    """Zero-order-hold discretization of a StateSpace at sample period dt."""

    Ad: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")

    @property
    def n(self) -> int:
        return self.Ad.shape[0]


@dataclass
class PlantState:
    """Physical state of one simulation step.

    theta_m is carried alongside the four dynamic states because the
    position loop feeds back the motor angle.
    """

    i_a: float = 0.0        # armature current [A]
    omega_m: float = 0.0    # motor speed [rad/s]
    deflection: float = 0.0  # torsional twist theta_m - theta_l [rad]
    omega_l: float = 0.0    # load speed [rad/s]
    theta_m: float = 0.0    # motor angle [rad]

    def as_vector(self) -> np.ndarray:
        return np.array([self.i_a, self.omega_m, self.deflection, self.omega_l, self.theta_m])


def build_motor_tf(p: PlantParameters) -> TransferFunction:
    """Voltage-to-motor-speed block with the rigid mechanical approximation.

    The mechanical impedance torque/speed is approximated by
    (J_m + J_l)s + B_m, valid because the shaft stiffness is several orders
    above the operating frequency range.
    """
    # K_t / (K_t*K_b + (L_a s + R_a)((J_m+J_l) s + B_m))
    den = np.polyadd(
        np.polymul([p.L_a, p.R_a], [p.J_m + p.J_l, p.B_m]),
        [p.K_t * p.K_b],
    )
    return TransferFunction((p.K_t,), tuple(den))


def build_axial_tf(p: PlantParameters) -> TransferFunction:
    """Motor-speed-to-load-speed block through the compliant coupling."""
    if p.J_l == 0.0:
        return TransferFunction((1.0,), (1.0,))  # rigid limit
    return TransferFunction((p.B_ml, p.K_s), (p.J_l, p.B_ml, p.K_s))


def build_plant_tf(p: PlantParameters) -> TransferFunction:
    """Approximate voltage-to-load-speed transfer function (motor x axial)."""
    return build_motor_tf(p) * build_axial_tf(p)


def _torsion_char_poly(p: PlantParameters) -> np.ndarray:
    """det H(s) / s of the two-inertia torque balance, a cubic in s.

    The determinant of the stiffness/damping matrix always carries a factor
    s (rigid-body rotation), which is divided out analytically here.
    """
    h11 = np.array([p.J_m, p.B_m + p.B_ml, p.K_s])
    h22 = np.array([p.J_l, p.B_l + p.B_ml, p.K_s])
    h12 = np.array([p.B_ml, p.K_s])
    det = np.polysub(np.polymul(h11, h22), np.polymul(h12, h12))
    # det = [c4, c3, c2, c1, c0] with c0 == 0 structurally
    assert abs(det[-1]) <= 1e-9 * max(abs(det)), "torsion determinant lost its root at s=0"
    return det[:-1]


def build_two_mass_tf(p: PlantParameters) -> TransferFunction:
    """Unapproximated torque-to-motor-speed block of the two-inertia model.

    Note: the torque balance determinant det H(s) always has a root at the
    origin (rigid-body rotation); writing the speed transfer as
    (J_l s^2 + B_ml s + K_s) / det H(s) without cancelling that root yields
    an angle response, off by one integrator — its DC limit would be
    infinite instead of 1/B_m.  The cancelled (velocity) form is returned
    so that the rigid approximation (J_m+J_l)s + B_m is its actual
    low-frequency inverse.
    """
    num = (p.J_l, p.B_l + p.B_ml, p.K_s)
    return TransferFunction(num, tuple(_torsion_char_poly(p)))


def build_unapproximated_plant_tf(p: PlantParameters) -> TransferFunction:
    """Voltage-to-load-speed transfer function without the rigid approximation.

    Used to validate the approximate product form: closing the armature
    circuit around the full two-inertia torque balance gives
    K_t (B_ml s + K_s) / ((L_a s + R_a) q(s) + K_t K_b (J_l s^2 + B_ml s + K_s))
    with q = det H / s.
    """
    q = _torsion_char_poly(p)
    n1 = np.array([p.J_l, p.B_l + p.B_ml, p.K_s])
    den = np.polyadd(np.polymul([p.L_a, p.R_a], q), p.K_t * p.K_b * n1)
    return TransferFunction((p.K_t * p.B_ml, p.K_t * p.K_s), tuple(den))


def build_plant_state_space(p: PlantParameters) -> StateSpace:
    """Physical realization used by the closed-loop simulator.

    State  x = [i_a, omega_m, theta_m - theta_l, omega_l, theta_m]
    Input  u = [v_a, tau_l]   (load torque disturbance, zero by default)
    Output y = [i_a, omega_m, omega_l, theta_m, theta_l]
    """
    A = np.array([
        [-p.R_a / p.L_a, -p.K_b / p.L_a, 0.0, 0.0, 0.0],
        [p.K_t / p.J_m, -(p.B_m + p.B_ml) / p.J_m, -p.K_s / p.J_m, p.B_ml / p.J_m, 0.0],
        [0.0, 1.0, 0.0, -1.0, 0.0],
        [0.0, p.B_ml / p.J_l, p.K_s / p.J_l, -(p.B_l + p.B_ml) / p.J_l, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
    ])
    B = np.array([
        [1.0 / p.L_a, 0.0],
        [0.0, 0.0],
        [0.0, 0.0],
        [0.0, 1.0 / p.J_l],
        [0.0, 0.0],
    ])
    C = np.array([
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0, 1.0],
    ])
    D = np.zeros((5, 2))
    return StateSpace(A, B, C, D)


def tf_to_state_space(tf: TransferFunction) -> StateSpace:
    """Controllable canonical realization of a proper transfer function."""
    den = np.asarray(tf.den, dtype=float)
    num = np.asarray(tf.num, dtype=float)
    den = den / den[0]
    num = num / tf.den[0]
    n = len(den) - 1
    b = np.concatenate([np.zeros(n + 1 - len(num)), num])  # pad to degree n
    d = b[0]
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]])
    a = den[1:]
    A = np.zeros((n, n))
    A[0, :] = -a
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = (b[1:] - a * d)[None, :]
    return StateSpace(A, B, C, [[d]])


def tf_eval(tf: TransferFunction, s: complex) -> complex:
    return np.polyval(tf.num, s) / np.polyval(tf.den, s)


def ss_eval(ss: StateSpace, s: complex) -> complex:
    """Transfer function of a SISO realization evaluated at one point."""
    if ss.n == 0:
        return complex(ss.D[0, 0])
    M = s * np.eye(ss.n) - ss.A
    return complex((ss.C @ np.linalg.solve(M, ss.B) + ss.D)[0, 0])


def discretize_zoh(ss: StateSpace, dt: float) -> DiscreteStateSpace:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    n, m = ss.n, ss.B.shape[1]
    if n == 0:
        return DiscreteStateSpace(ss.A.copy(), ss.B.copy(), ss.C.copy(), ss.D.copy(), dt)
    M = np.zeros((n + m, n + m))
    M[:n, :n] = ss.A
    M[:n, n:] = ss.B
    Me = expm(M * dt)
    Ad = np.ascontiguousarray(Me[:n, :n])
    Bd = np.ascontiguousarray(Me[:n, n:])
    return DiscreteStateSpace(Ad, Bd, ss.C.copy(), ss.D.copy(), dt)


def step_state(dss: DiscreteStateSpace, x: np.ndarray, u: np.ndarray):
    """Advance one sample: returns (x_next, y).  Pure function."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape[0] != dss.n or u.shape[0] != dss.Bd.shape[1]:
        raise ValueError("state/input dimension mismatch")
    x_next = dss.Ad @ x + dss.Bd @ u
    y = dss.C @ x + dss.D @ u
    return x_next, y


def simulate_lti(dss: DiscreteStateSpace, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """Run a discrete LTI system over an input sequence.

    u is (nsteps,) for single-input systems or (nsteps, m).  Returns the
    output sequence (nsteps, p).  The recurrence is delegated to a compiled
    kernel; long traces at microsecond steps are routine here.
    """
    from ._kernels import lti_loop

    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if x0 is None:
        x0 = np.zeros(dss.n)
    xs = lti_loop(dss.Ad, dss.Bd, np.ascontiguousarray(u), np.asarray(x0, dtype=float))
    return xs @ dss.C.T + u @ dss.D.T


def open_loop_step_trace(p: PlantParameters, v_step: float, duration: float, dt: float):
    """Open-loop voltage step response recorded as a trace.

    As in closed-loop traces, pos/spd hold the motor-encoder channels and
    the load (nut) side is logged separately; the difference of the two
    speed channels is the twist rate carrying the stiffness signature.
    """
    from .control import SimulationTrace

    nsteps = int(round(duration / dt))
    if nsteps < 2:
        raise ValueError("duration must cover at least two samples")
    dss = discretize_zoh(build_plant_state_space(p), dt)
    u = np.zeros((nsteps, 2))
    u[:, 0] = v_step
    y = simulate_lti(dss, u)
    lead = p.lead_per_rad
    return SimulationTrace(
        dt=dt,
        pos_ref=np.zeros(nsteps),
        spd_ref=np.zeros(nsteps),
        pos=y[:, 3] * lead,
        spd=y[:, 1] * lead,
        i_a=y[:, 0],
        v_a=np.full(nsteps, float(v_step)),
        pos_load=y[:, 4] * lead,
        spd_load=y[:, 2] * lead,
    )


def _step_response_sse(measured_spd: np.ndarray, v_step: float,
                       dt: float, p: PlantParameters, K_s: float) -> float:
    trial = open_loop_step_trace(p.with_stiffness(K_s), v_step, measured_spd.size * dt, dt)
    n = min(trial.spd.size, measured_spd.size)
    r = trial.spd[:n] - measured_spd[:n]
    return float(r @ r)


def _golden_min(f, a: float, b: float, tol: float = 1e-3):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def fit_axial_stiffness(measured, p: PlantParameters, Ks_search: tuple[float, float]) -> float:
    """Estimate the shaft stiffness from a measured open-loop step response.

    Minimizes the sum of squared deviations between the measured speed
    channel and the model's step response, searching over log(K_s): a
    coarse log-grid scan locates candidate basins, and golden-section
    search (relative tolerance 1e-3) refines the best few.  Multiple
    basins are refined because beyond the observable stiffness range the
    residual flattens to rounding noise and the coarse scan alone can
    bracket a spurious dip.

    Args:
        measured: SimulationTrace of a voltage step response; the applied
            step amplitude is read from its v_a channel.
        p: plant constants; its own K_s entry is ignored.
        Ks_search: (lo, hi) positive search interval.

    Returns:
        The estimated stiffness, clamped to the search interval.
    """
    lo, hi = float(Ks_search[0]), float(Ks_search[1])
    if not (0.0 < lo < hi):
        raise ValueError("stiffness search range must satisfy 0 < lo < hi")
    spd = np.asarray(measured.spd, dtype=float)
    if spd.size == 0:
        raise ValueError("measured trace is empty")
    v_step = float(measured.v_a[0])

    def sse(log_k):
        return _step_response_sse(spd, v_step, measured.dt, p, math.exp(log_k))

    llo, lhi = math.log(lo), math.log(hi)
    # The residual collapses only where the simulated resonant ring stays
    # correlated with the measured one; that basin's log-width is about
    # pi / (omega_n * T_window), so the scan density must follow it (and
    # short measurement windows therefore identify more robustly).
    omega_hi = math.sqrt(hi / p.J_l)
    t_window = spd.size * measured.dt
    basin = math.pi / (omega_hi * t_window)
    step = max(min(0.04, basin), (lhi - llo) / 8000.0)
    n_scan = max(33, int(math.ceil((lhi - llo) / step)) + 1)
    grid = np.linspace(llo, lhi, n_scan)
    vals = np.array([sse(g) for g in grid])
    order = np.argsort(vals)
    best_x, best_f = grid[order[0]], vals[order[0]]
    refined = set()
    for k in order[:3]:
        bracket = (max(0, k - 1), min(len(grid) - 1, k + 1))
        if bracket in refined:
            continue
        refined.add(bracket)
        a, b = grid[bracket[0]], grid[bracket[1]]
        if a == b:
            continue
        x, fx = _golden_min(sse, a, b)
        if fx < best_f:
            best_x, best_f = x, fx
    est = math.exp(best_x)
    return min(max(est, lo), hi)
