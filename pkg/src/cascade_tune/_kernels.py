"""Compiled inner loops for the closed-loop and relay simulations.

The cascade runs for ~1e5 steps per trace and tuning sweeps evaluate
thousands of traces, so the per-step loops are JIT-compiled.  Numerical
behaviour is pinned by an equivalence test against the pure-Python
controller primitives in control.py.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MODE_POSITION = 0
MODE_SPEED = 1
MODE_CURRENT = 2

DIVERGENCE_LIMIT = 1e100


@njit(cache=True, nogil=True)
def lti_loop(Ad, Bd, u, x0):
    """State recurrence x[k+1] = Ad x[k] + Bd u[k]; returns the state history."""
    nsteps = u.shape[0]
    n = Ad.shape[0]
    m = Bd.shape[1]
    xs = np.empty((nsteps, n))
    x = x0.copy()
    for k in range(nsteps):
        for i in range(n):
            xs[k, i] = x[i]
        xn = np.zeros(n)
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += Ad[i, j] * x[j]
            for j in range(m):
                s += Bd[i, j] * u[k, j]
            xn[i] = s
        x = xn
    return xs


@njit(cache=True, nogil=True)
def cascade_loop(Ad, Bdv, Bdt, tau_l, pos_ref, spd_ref, i_ref_ext, mode,
                 dt, outer_div, K_p, K_v, K_i, K_cp, K_ci, K_cd,
                 literal_kcd, n_f, v_max, lead, omega_max):
    """Three-loop cascade over the 5-state plant.

    Position (P) and speed (PI) loops run every `outer_div` plant steps,
    mirroring a PLC cycle slower than the drive's current loop; the current
    controller and the plant run every step.  Integrators accumulate
    trapezoidally and freeze while the voltage output is saturated in the
    direction of the error (conditional anti-windup).

    Returns (pos, spd, i_a, v_a, pos_load, spd_load, n_valid, alarm) with
    motor-encoder-derived pos/spd in linear units and the load side logged
    separately.  n_valid < nsteps means the state left the divergence guard
    and the trace must be truncated and flagged unstable.
    """
    nsteps = pos_ref.shape[0]
    pos = np.zeros(nsteps)
    spd = np.zeros(nsteps)
    i_a = np.zeros(nsteps)
    v_a = np.zeros(nsteps)
    pos_load = np.zeros(nsteps)
    spd_load = np.zeros(nsteps)

    x = np.zeros(5)
    int_s = 0.0       # speed-loop integrator
    e_s_prev = 0.0
    int_c = 0.0       # current-loop integrator
    e_c_prev = 0.0
    d_filt = 0.0      # filtered derivative state (current loop)
    i_ref = 0.0
    sat_dir = 0.0     # -1/0/+1: voltage saturation direction at previous step
    alarm = False
    n_valid = nsteps
    dt_outer = dt * outer_div
    tau_f = n_f * dt
    alpha = tau_f / (tau_f + dt)

    for k in range(nsteps):
        w_m = x[1]
        pos_m = x[4] * lead
        if mode == MODE_CURRENT:
            i_ref = i_ref_ext[k]
        elif k % outer_div == 0:
            e_p = pos_ref[k] - pos_m
            w_ref = (spd_ref[k] + K_p * e_p) / lead
            e_s = w_ref - w_m
            if sat_dir == 0.0 or e_s * sat_dir < 0.0:
                int_s = int_s + 0.5 * dt_outer * (e_s + e_s_prev)
            i_ref = K_v * e_s + K_i * int_s
            e_s_prev = e_s

        e_c = i_ref - x[0]
        if sat_dir == 0.0 or e_c * sat_dir < 0.0:
            int_c = int_c + 0.5 * dt * (e_c + e_c_prev)
        if literal_kcd:
            v = (K_cp + K_cd) * e_c + K_ci * int_c
        else:
            d_filt = alpha * d_filt + (1.0 - alpha) * (e_c - e_c_prev) / dt
            v = K_cp * e_c + K_ci * int_c + K_cd * d_filt
        e_c_prev = e_c

        if v > v_max:
            v = v_max
            sat_dir = 1.0
        elif v < -v_max:
            v = -v_max
            sat_dir = -1.0
        else:
            sat_dir = 0.0

        pos[k] = pos_m
        spd[k] = w_m * lead
        i_a[k] = x[0]
        v_a[k] = v
        pos_load[k] = (x[4] - x[2]) * lead
        spd_load[k] = x[3] * lead
        if w_m > omega_max or -w_m > omega_max:
            alarm = True

        xn = np.empty(5)
        ok = True
        for i in range(5):
            s = Bdv[i] * v + Bdt[i] * tau_l[k]
            for j in range(5):
                s += Ad[i, j] * x[j]
            xn[i] = s
            if not (-DIVERGENCE_LIMIT < s < DIVERGENCE_LIMIT):
                ok = False
        if not ok:
            n_valid = k + 1
            break
        x = xn

    return pos, spd, i_a, v_a, pos_load, spd_load, n_valid, alarm


@njit(cache=True, nogil=True)
def relay_loop(Ad, Bdv, nsteps, stage, amplitude, hysteresis,
               dt, outer_div, K_v, K_i, K_cp, K_ci, K_cd,
               literal_kcd, n_f, v_max, lead):
    """Cascade with a relay substituted for one controller.

    stage 1: the speed controller is replaced; the relay drives the current
    reference with +-amplitude [A] on the sign of the speed error about a
    zero setpoint.  stage 2: the position controller is replaced; the relay
    commands +-amplitude [m/s] of speed correction while the speed PI runs
    normally.  Returns the relay input signal used for limit-cycle
    measurement (truncated early if the state diverges).
    """
    err = np.zeros(nsteps)
    x = np.zeros(5)
    int_s = 0.0
    e_s_prev = 0.0
    int_c = 0.0
    e_c_prev = 0.0
    d_filt = 0.0
    i_ref = 0.0
    relay_state = 1.0
    sat_dir = 0.0
    dt_outer = dt * outer_div
    tau_f = n_f * dt
    alpha = tau_f / (tau_f + dt)
    h = 0.5 * hysteresis

    for k in range(nsteps):
        w_m = x[1]
        pos_m = x[4] * lead
        if k % outer_div == 0:
            if stage == 1:
                e = -w_m  # regulate about zero speed [rad/s]
                if relay_state > 0.0 and e < -h:
                    relay_state = -1.0
                elif relay_state < 0.0 and e > h:
                    relay_state = 1.0
                i_ref = amplitude * relay_state
            else:
                e = -pos_m  # regulate about zero position [m]
                if relay_state > 0.0 and e < -h:
                    relay_state = -1.0
                elif relay_state < 0.0 and e > h:
                    relay_state = 1.0
                w_ref = (amplitude * relay_state) / lead
                e_s = w_ref - w_m
                if sat_dir == 0.0 or e_s * sat_dir < 0.0:
                    int_s = int_s + 0.5 * dt_outer * (e_s + e_s_prev)
                i_ref = K_v * e_s + K_i * int_s
                e_s_prev = e_s

        e_c = i_ref - x[0]
        if sat_dir == 0.0 or e_c * sat_dir < 0.0:
            int_c = int_c + 0.5 * dt * (e_c + e_c_prev)
        if literal_kcd:
            v = (K_cp + K_cd) * e_c + K_ci * int_c
        else:
            d_filt = alpha * d_filt + (1.0 - alpha) * (e_c - e_c_prev) / dt
            v = K_cp * e_c + K_ci * int_c + K_cd * d_filt
        e_c_prev = e_c

        if v > v_max:
            v = v_max
            sat_dir = 1.0
        elif v < -v_max:
            v = -v_max
            sat_dir = -1.0
        else:
            sat_dir = 0.0

        if stage == 1:
            err[k] = -w_m
        else:
            err[k] = -pos_m

        xn = np.empty(5)
        ok = True
        for i in range(5):
            s = Bdv[i] * v
            for j in range(5):
                s += Ad[i, j] * x[j]
            xn[i] = s
            if not (-DIVERGENCE_LIMIT < s < DIVERGENCE_LIMIT):
                ok = False
        if not ok:
            return err[: k + 1]
        x = xn

    return err
