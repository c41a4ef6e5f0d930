import io

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from scipy import linalg

from workbench.constants import TRACE_CSV_HEADER
from workbench.exceptions import ShapeError
from workbench.grid import (
    DW,
    DW_MEAS,
    N_STATES,
    PiecewiseConstantSchedule,
    SystemParams,
    Trace,
    build_state_matrices,
    constant_schedule,
    derivative,
    discrete_propagator,
    dominant_oscillatory_mode,
    eigenmodes,
    modal_report,
    simulate,
    step,
    zero_attack,
    zero_inputs,
)


def exact_step_response(params, u, horizon):
    """Closed-form state at ``horizon`` from rest under a constant input."""
    m = build_state_matrices(params)
    augmented = np.zeros((N_STATES + 1, N_STATES + 1))
    augmented[:N_STATES, :N_STATES] = m.A
    augmented[:N_STATES, N_STATES] = m.Bmat @ np.asarray(u)
    return linalg.expm(horizon * augmented)[:N_STATES, N_STATES]


class SystemParamsTests(SimpleTestCase):
    def test_presets_load_and_validate(self):
        for name in ("MG1", "MG2", "MG3", "mg2"):
            SystemParams.preset(name).clean()

    def test_unknown_preset_is_a_validation_error(self):
        with self.assertRaises(ValidationError) as ctx:
            SystemParams.preset("MG9")
        self.assertIn("system", ctx.exception.message_dict)

    def test_non_positive_time_constant_rejected(self):
        params = SystemParams.from_dict({**SystemParams.preset("MG2").to_dict(), "governor_tc": 0.0})
        with self.assertRaises(ValidationError) as ctx:
            params.clean()
        self.assertIn("governor_tc", ctx.exception.message_dict)

    def test_unknown_parameter_rejected(self):
        with self.assertRaises(ValidationError):
            SystemParams.from_dict({"inertia": 6.0, "bogus": 1.0})


class DynamicsTests(SimpleTestCase):
    def setUp(self):
        self.params = SystemParams.preset("MG2")
        self.m = build_state_matrices(self.params)

    def test_derivative_checks_shapes(self):
        with self.assertRaises(ShapeError):
            derivative(np.zeros(5), np.zeros(2), np.zeros(4), self.m)

    def test_rest_is_an_equilibrium(self):
        x = step(np.zeros(N_STATES), np.zeros(2), np.zeros(4), self.m, 0.01)
        np.testing.assert_array_equal(x, np.zeros(N_STATES))

    def test_rk4_step_matches_closed_form(self):
        u = np.array([0.01, 0.0])
        x = step(np.zeros(N_STATES), u, np.zeros(4), build_state_matrices(SystemParams.preset("MG1")), 0.01)
        exact = exact_step_response(SystemParams.preset("MG1"), u, 0.01)
        self.assertLess(np.max(np.abs(x - exact)), 1e-8)

    def test_propagator_agrees_with_step(self):
        rng = np.random.default_rng(3)
        phi, gamma = discrete_propagator(self.m, 0.01)
        for _ in range(10):
            x = rng.normal(scale=0.01, size=N_STATES)
            u = rng.normal(scale=0.01, size=2)
            p = rng.normal(scale=0.01, size=4)
            np.testing.assert_allclose(phi @ x + gamma @ np.concatenate([u, p]), step(x, u, p, self.m, 0.01), atol=1e-12)

    def test_rk4_converges_at_fourth_order(self):
        u = [0.05, 0.0]
        exact = exact_step_response(self.params, u, 10.0)
        errors = [
            np.max(np.abs(simulate(self.params, constant_schedule(u), zero_attack(), 10.0, dt=dt).x[-1] - exact))
            for dt in (0.04, 0.02)
        ]
        self.assertTrue(10.0 < errors[0] / errors[1] < 22.0, errors)

    def test_step_load_settles(self):
        load = 0.1
        trace = simulate(SystemParams.preset("MG1"), constant_schedule([load, 0.0]), zero_attack(), 120.0, sample_period=1.0)
        self.assertLess(abs(trace.x[30, DW]), 1e-3)
        self.assertLess(abs(trace.x[-1, 0] - load), 1e-3)

    def test_simulate_rejects_bad_horizon_and_period(self):
        with self.assertRaises(ValidationError):
            simulate(self.params, zero_inputs(), zero_attack(), 0.0)
        with self.assertRaises(ValidationError):
            simulate(self.params, zero_inputs(), zero_attack(), 1.0, dt=0.01, sample_period=0.015)

    def test_simulate_samples_on_the_period(self):
        trace = simulate(self.params, constant_schedule([0.01, 0.0]), zero_attack(), 2.0, sample_period=0.05)
        self.assertEqual(len(trace), 41)
        np.testing.assert_allclose(np.diff(trace.t), 0.05)
        self.assertEqual(trace.x[0].tolist(), [0.0] * N_STATES)

    def test_responses_superpose(self):
        times = np.arange(0.0, 5.0, 0.5)
        for preset in ("MG1", "MG2", "MG3"):
            params = SystemParams.preset(preset)
            for seed in range(4):
                with self.subTest(preset=preset, seed=seed):
                    rng = np.random.default_rng(seed)
                    u1, u2 = rng.normal(scale=0.02, size=(2, len(times), 2))
                    p1, p2 = rng.normal(scale=0.02, size=(2, len(times), 4))
                    c = rng.uniform(-2.0, 2.0)

                    def run(u, p):
                        inputs = PiecewiseConstantSchedule(times, u)
                        attack = PiecewiseConstantSchedule(times, p)
                        return simulate(params, inputs, attack, 5.0).x

                    np.testing.assert_allclose(run(u1 + u2, p1 + p2), run(u1, p1) + run(u2, p2), rtol=0, atol=1e-12)
                    np.testing.assert_allclose(run(c * u1, c * p1), c * run(u1, p1), rtol=0, atol=1e-12)


class ScheduleTests(SimpleTestCase):
    def test_zero_order_hold(self):
        schedule = PiecewiseConstantSchedule(times=[0.0, 1.0, 2.5], values=[1.0, 2.0, 3.0])
        self.assertEqual(schedule(-1.0)[0], 1.0)
        self.assertEqual(schedule(0.999)[0], 1.0)
        self.assertEqual(schedule(1.0)[0], 2.0)
        self.assertEqual(schedule(10.0)[0], 3.0)

    def test_breakpoints_must_increase(self):
        with self.assertRaises(ValidationError):
            PiecewiseConstantSchedule(times=[0.0, 0.0], values=[1.0, 2.0])


class TraceTests(SimpleTestCase):
    def make_trace(self, n=5):
        return Trace(
            sample_period=0.01,
            t=0.01 * np.arange(n),
            x=np.zeros((n, N_STATES)),
            u=np.zeros((n, 2)),
            p=np.zeros((n, 4)),
            annotations=[{"event": "relay_trip", "kind": "ROCOF", "time": 0.03}],
        )

    def test_csv_has_header_rows_and_annotations(self):
        stream = io.StringIO()
        self.make_trace().write_csv(stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], ",".join(TRACE_CSV_HEADER))
        self.assertEqual(len(lines), 1 + 5 + 1)
        self.assertEqual(lines[-1], "# event=relay_trip,kind=ROCOF,time=0.03")

    def test_downsample(self):
        trace = self.make_trace(10).downsample(5)
        self.assertEqual(len(trace), 2)
        self.assertAlmostEqual(trace.sample_period, 0.05)

    def test_time_must_increase(self):
        with self.assertRaises(ValidationError):
            Trace(0.01, np.array([0.0, 0.0]), np.zeros((2, 6)), np.zeros((2, 2)), np.zeros((2, 4)))

    def test_column_lookup(self):
        trace = self.make_trace()
        trace.x[:, DW_MEAS] = 7.0
        self.assertTrue(np.all(trace.column("dw_meas") == 7.0))


class EigenTests(SimpleTestCase):
    def test_mg2_oscillatory_mode_near_four_rad_per_second(self):
        mode = dominant_oscillatory_mode(SystemParams.preset("MG2"))
        self.assertLess(abs(mode.imag - 4.0), 0.4)
        self.assertLess(mode.real, 0.0)

    def test_mg3_oscillatory_mode_near_three_point_four(self):
        mode = dominant_oscillatory_mode(SystemParams.preset("MG3"))
        self.assertLess(abs(mode.imag - 3.4), 0.34)

    def test_sensor_poles_and_stability(self):
        values = eigenmodes(SystemParams.preset("MG1"))
        self.assertEqual(len(values), N_STATES)
        self.assertTrue(np.all(values.real < 0))
        self.assertEqual(int(np.sum(np.isclose(values, -10.0, atol=1e-6))), 2)

    def test_modal_report_rows(self):
        rows = modal_report(SystemParams.preset("MG2"))
        self.assertEqual(len(rows), N_STATES)
        reals = [row["real"] for row in rows]
        self.assertEqual(reals, sorted(reals, reverse=True))
        oscillatory = [row for row in rows if row["oscillatory"]]
        self.assertEqual(len(oscillatory), 2)
        for row in oscillatory:
            self.assertTrue(0.0 < row["damping_ratio"] < 1.0)
