"""Plant model: transfer-function builders, discretization, stiffness fit."""

import math
from dataclasses import replace

import numpy as np
import pytest

from cascade_tune.control import SimulationTrace
from cascade_tune.plant import (DiscreteStateSpace, PlantParameters, StateSpace,
                                TransferFunction, build_axial_tf, build_motor_tf,
                                build_plant_state_space, build_plant_tf,
                                build_two_mass_tf, build_unapproximated_plant_tf,
                                discretize_zoh, fit_axial_stiffness,
                                open_loop_step_trace, simulate_lti, ss_eval,
                                step_state, tf_eval, tf_to_state_space)


@pytest.fixture
def p():
    return PlantParameters()


class TestParameters:
    def test_table_defaults(self, p):
        assert p.R_a == 9.02
        assert p.K_s == 3e7
        assert p.Q == 0.018
        assert p.omega_max == pytest.approx(8000 * 2 * math.pi / 60)

    @pytest.mark.parametrize("field", ["R_a", "L_a", "K_t", "K_b", "J_m",
                                       "J_l", "K_s", "Q", "omega_max"])
    def test_positive_required(self, field):
        with pytest.raises(ValueError, match=field):
            PlantParameters(**{field: 0.0})

    def test_negative_damping_rejected(self):
        with pytest.raises(ValueError, match="B_ml"):
            PlantParameters(B_ml=-1.0)


class TestTransferFunction:
    def test_improper_rejected(self):
        with pytest.raises(ValueError, match="proper"):
            TransferFunction((1.0, 0.0, 0.0), (1.0, 1.0))

    def test_zero_leading_denominator_rejected(self):
        with pytest.raises(ValueError):
            TransferFunction((1.0,), (0.0,))

    def test_product(self):
        a = TransferFunction((1.0,), (1.0, 1.0))
        b = TransferFunction((2.0,), (1.0, 2.0))
        c = a * b
        assert c.num == (2.0,)
        assert c.den == (1.0, 3.0, 2.0)


class TestMotorBlock:
    def test_dc_gain_matches_hand_value(self, p):
        # K_t / (K_t K_b + R_a B_m) evaluated by hand from the data sheet
        expected = 0.515 / (0.515 * 0.55 + 9.02 * 0.0074)
        assert build_motor_tf(p).dc_gain() == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(1.471437, rel=1e-6)

    def test_zero_inductance_collapses_to_first_order(self, p):
        pz = replace(p, L_a=1e-30)
        tf = build_motor_tf(pz)
        pole = tf.poles()
        pole = pole[np.abs(pole) < 1e10]  # ignore the parasitic fast root
        expected = -(p.K_t * p.K_b + p.R_a * p.B_m) / (p.R_a * (p.J_m + p.J_l))
        assert pole[np.argmin(np.abs(pole - expected))] == pytest.approx(expected, rel=1e-6)

    def test_no_damping_paths_gives_integrator(self, p):
        pz = replace(p, K_b=1e-30, B_m=0.0)
        tf = build_motor_tf(pz)
        # denominator constant term collapses: pole at the origin
        assert abs(tf.den[-1]) <= 1e-25 * abs(tf.den[0])


class TestAxialBlock:
    def test_unit_dc_gain(self, p):
        assert build_axial_tf(p).dc_gain() == 1.0

    def test_natural_frequency(self, p):
        tf = build_axial_tf(p)
        wn = math.sqrt(tf.den[2] / tf.den[0])
        assert wn == pytest.approx(math.sqrt(3e7 / 6.53e-4), rel=1e-12)

    def test_rigid_limit(self, p):
        pz = replace(p, J_l=1e-30)
        tf = build_axial_tf(pz)
        for w in (1.0, 100.0, 1e4):
            assert tf_eval(tf, 1j * w) == pytest.approx(1.0, abs=1e-9)


class TestPlantTf:
    def test_dc_gain(self, p):
        assert build_plant_tf(p).dc_gain() == pytest.approx(1.471437, rel=1e-5)

    def test_poles_are_union_of_factors(self, p):
        g = build_plant_tf(p)
        motor = build_motor_tf(p)
        axial = build_axial_tf(p)
        expected = np.sort_complex(np.concatenate([motor.poles(), axial.poles()]))
        got = np.sort_complex(g.poles())
        assert np.allclose(got, expected, rtol=1e-6)

    def test_rigid_surrogate_matches_motor_only(self, p):
        # K_s -> 1e12 makes the compliant block transparent
        p12 = p.with_stiffness(1e12)
        dt, nsteps = 1e-6, 200_000
        u = np.ones(nsteps)
        full = simulate_lti(discretize_zoh(tf_to_state_space(build_plant_tf(p12)), dt), u)
        motor = simulate_lti(discretize_zoh(tf_to_state_space(build_motor_tf(p12)), dt), u)
        rel = np.abs(full[:, 0] - motor[:, 0]).max() / np.abs(motor).max()
        assert rel < 1e-3


class TestTwoMassBlock:
    def test_rigid_approximation_below_100hz(self, p):
        t1 = build_two_mass_tf(p)
        worst = 0.0
        for f in np.linspace(1.0, 100.0, 40):
            w = 2 * math.pi * f
            inv = 1.0 / tf_eval(t1, 1j * w)
            approx = (p.J_m + p.J_l) * 1j * w + p.B_m
            worst = max(worst, abs(inv - approx) / abs(inv))
        assert worst < 0.05

    def test_undamped_pole_at_origin(self, p):
        pz = replace(p, B_m=0.0, B_ml=0.0, B_l=0.0)
        tf = build_two_mass_tf(pz)
        assert abs(tf.den[-1]) <= 1e-20 * abs(tf.den[0])

    def test_single_inertia_limit(self, p):
        # J_l -> 0, B_ml = 0: the speed transfer collapses to 1/(J_m s + B_m).
        # (The angle form 1/(J_m s^2 + B_m s) carries one extra integrator and
        # has an infinite DC limit, inconsistent with a damped shaft.)
        pz = replace(p, J_l=1e-30, B_ml=0.0)
        tf = build_two_mass_tf(pz)
        for s in (1.0 + 0j, 1j * 10.0, 50.0 + 0j):
            expected = 1.0 / (p.J_m * s + p.B_m)
            assert tf_eval(tf, s) == pytest.approx(expected, rel=1e-6)

    def test_dc_limit_is_inverse_motor_damping(self, p):
        assert build_two_mass_tf(p).dc_gain() == pytest.approx(1.0 / p.B_m, rel=1e-9)


class TestStateSpaceConversion:
    def test_first_order_canonical(self):
        ss = tf_to_state_space(TransferFunction((1.0,), (1.0, 1.0)))
        assert np.allclose(ss.A, [[-1.0]])
        assert np.allclose(ss.B, [[1.0]])
        assert np.allclose(ss.C, [[1.0]])
        assert np.allclose(ss.D, [[0.0]])

    def test_second_order_dc_gain(self):
        ss = tf_to_state_space(TransferFunction((1.0, 2.0), (1.0, 3.0, 2.0)))
        assert ss.n == 2
        dc = (ss.C @ np.linalg.solve(-ss.A, ss.B) + ss.D)[0, 0]
        assert dc == pytest.approx(1.0, rel=1e-12)

    def test_pure_gain(self):
        ss = tf_to_state_space(TransferFunction((3.5,), (1.0,)))
        assert ss.n == 0
        assert ss.D[0, 0] == 3.5

    def test_round_trip_random_tfs(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = rng.integers(1, 5)
            den = np.concatenate([[1.0], rng.normal(0, 2, n)])
            num = rng.normal(0, 2, rng.integers(1, n + 2))
            tf = TransferFunction(tuple(num), tuple(den))
            ss = tf_to_state_space(tf)
            for s in (0.3 + 0.7j, 2.0 + 0j, -0.5 + 3j, 1j * 10):
                want = tf_eval(tf, s)
                got = ss_eval(ss, s)
                assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


class TestDiscretization:
    def test_scalar_closed_form(self):
        ss = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        dss = discretize_zoh(ss, 0.1)
        assert dss.Ad[0, 0] == pytest.approx(math.exp(-0.1), abs=1e-12)
        assert dss.Bd[0, 0] == pytest.approx(1.0 - math.exp(-0.1), abs=1e-12)

    def test_integrator(self):
        ss = StateSpace([[0.0]], [[2.0]], [[1.0]], [[0.0]])
        dss = discretize_zoh(ss, 0.25)
        assert dss.Ad[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert dss.Bd[0, 0] == pytest.approx(0.5, abs=1e-14)

    def test_semigroup_property(self, p):
        ss = build_plant_state_space(p)
        full = discretize_zoh(ss, 2e-5)
        half = discretize_zoh(ss, 1e-5)
        composed = half.Ad @ half.Ad
        assert np.max(np.abs(composed - full.Ad)) < 1e-12 * np.max(np.abs(full.Ad))

    def test_nonpositive_dt_rejected(self, p):
        with pytest.raises(ValueError):
            discretize_zoh(build_plant_state_space(p), 0.0)


class TestStepState:
    @pytest.fixture
    def scalar_dss(self):
        return discretize_zoh(StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]]), 0.1)

    def test_zero_maps_to_zero(self, scalar_dss):
        x, y = step_state(scalar_dss, np.zeros(1), np.zeros(1))
        assert x[0] == 0.0 and y[0] == 0.0

    def test_identity_dynamics(self):
        dss = DiscreteStateSpace(np.eye(2), np.zeros((2, 1)), np.eye(2),
                                 np.zeros((2, 1)), 0.1)
        x0 = np.array([1.5, -2.0])
        x, _ = step_state(dss, x0, np.array([3.0]))
        assert np.array_equal(x, x0)

    def test_scalar_step_value(self, scalar_dss):
        x, _ = step_state(scalar_dss, np.zeros(1), np.ones(1))
        assert x[0] == pytest.approx(1.0 - math.exp(-0.1), abs=1e-12)

    def test_dimension_mismatch(self, scalar_dss):
        with pytest.raises(ValueError):
            step_state(scalar_dss, np.zeros(2), np.ones(1))

    def test_deterministic(self, scalar_dss):
        a = step_state(scalar_dss, np.array([0.3]), np.array([0.7]))
        b = step_state(scalar_dss, np.array([0.3]), np.array([0.7]))
        assert a[0][0] == b[0][0] and a[1][0] == b[1][0]


class TestSimulationFidelity:
    def test_dc_gain_conservation(self, p):
        # constant voltage drives the load speed to G(0) * V at steady state
        trace = open_loop_step_trace(p, 10.0, 0.3, 1e-5)
        w_final = trace.spd_load[-1] / p.lead_per_rad
        assert w_final / 10.0 == pytest.approx(build_plant_tf(p).dc_gain(), rel=5e-3)

    def test_approximation_vs_two_mass_step_response(self, p):
        dt, nsteps = 1e-6, 300_000
        u = np.ones(nsteps)
        approx = simulate_lti(
            discretize_zoh(tf_to_state_space(build_plant_tf(p)), dt), u)[:, 0]
        full = simulate_lti(
            discretize_zoh(tf_to_state_space(build_unapproximated_plant_tf(p)), dt), u)[:, 0]
        rel = np.abs(approx - full).max() / np.abs(full).max()
        assert rel < 0.02

    def test_physical_realization_matches_unapproximated_tf(self, p):
        # the 5-state simulator state-space and the polynomial form agree
        ss = build_plant_state_space(p)
        tf = build_unapproximated_plant_tf(p)
        for s in (1.0 + 2j, 10.0 + 0j, 1j * 500.0):
            M = s * np.eye(ss.n) - ss.A
            g = (ss.C[2] @ np.linalg.solve(M, ss.B[:, 0]))
            assert g == pytest.approx(tf_eval(tf, s), rel=1e-9)


class TestStiffnessFit:
    def test_round_trip_nominal(self, p):
        measured = open_loop_step_trace(p, 10.0, 0.002, 1e-6)
        est = fit_axial_stiffness(measured, p.with_stiffness(1e7), (1e6, 1e9))
        assert abs(est - 3e7) / 3e7 < 0.05

    def test_round_trip_with_noise(self, p):
        # soft shaft so the resonance is observable; noise at 1% RMS of the
        # stiffness-induced response component
        truth = 3e4
        meas = open_loop_step_trace(p.with_stiffness(truth), 10.0, 0.05, 1e-5)
        rigid = open_loop_step_trace(p.with_stiffness(1e12), 10.0, 0.05, 1e-5)
        sigma = 0.01 * float(np.sqrt(np.mean((meas.spd - rigid.spd) ** 2)))
        rng = np.random.default_rng(0)
        noisy = SimulationTrace(
            dt=meas.dt, pos_ref=meas.pos_ref, spd_ref=meas.spd_ref, pos=meas.pos,
            spd=meas.spd + rng.normal(0.0, sigma, meas.spd.size),
            i_a=meas.i_a, v_a=meas.v_a)
        est = fit_axial_stiffness(noisy, p, (1e3, 1e7))
        assert abs(est - truth) / truth < 0.15

    def test_truth_at_lower_bound(self, p):
        measured = open_loop_step_trace(p.with_stiffness(1e6), 10.0, 0.002, 1e-6)
        est = fit_axial_stiffness(measured, p, (1e6, 1e9))
        assert est == pytest.approx(1e6, rel=0.05)

    def test_bad_range_rejected(self, p):
        measured = open_loop_step_trace(p, 10.0, 0.002, 1e-6)
        with pytest.raises(ValueError):
            fit_axial_stiffness(measured, p, (-1.0, 1e9))

    def test_empty_trace_rejected(self, p):
        with pytest.raises(ValueError):
            open_loop_step_trace(p, 10.0, 1e-9, 1e-6)
