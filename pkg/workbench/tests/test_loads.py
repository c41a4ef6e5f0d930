import io

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from workbench.constants import LOAD_CSV_HEADER
from workbench.loads import LoadProcessConfig, load_inputs, sample_load_trace, write_load_csv


class LoadProcessConfigTests(SimpleTestCase):
    def test_defaults_are_valid(self):
        LoadProcessConfig().clean()

    def test_negative_sigma_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            LoadProcessConfig(sigma_fast=-1.0).clean()
        self.assertIn("sigma_fast", ctx.exception.message_dict)

    def test_unknown_key_rejected(self):
        with self.assertRaises(ValidationError):
            LoadProcessConfig.from_dict({"sigma": 0.1})


class SampleLoadTraceTests(SimpleTestCase):
    def test_starts_at_zero_with_breakpoints_on_both_grids(self):
        config = LoadProcessConfig(fast_step=1.0, slow_step=2.5)
        schedule = sample_load_trace(config, 10.0, seed=4)
        self.assertEqual(schedule(0.0)[0], 0.0)
        expected = sorted(set([0.0] + [float(k) for k in range(1, 11)] + [2.5, 5.0, 7.5, 10.0]))
        np.testing.assert_allclose(schedule.times, expected)

    def test_same_seed_same_walk(self):
        a = sample_load_trace(LoadProcessConfig(), 600.0, seed=11)
        b = sample_load_trace(LoadProcessConfig(), 600.0, seed=11)
        c = sample_load_trace(LoadProcessConfig(), 600.0, seed=12)
        np.testing.assert_array_equal(a.values, b.values)
        self.assertFalse(np.array_equal(a.values, c.values))

    def test_fast_increments_have_configured_spread(self):
        config = LoadProcessConfig(sigma_fast=0.01, sigma_slow=0.0)
        schedule = sample_load_trace(config, 20000.0, seed=0)
        steps = np.diff(schedule.values[:, 0])
        self.assertAlmostEqual(float(np.std(steps)), 0.01, delta=0.0005)
        self.assertAlmostEqual(float(np.mean(steps)), 0.0, delta=0.0005)

    def test_default_fast_variance(self):
        config = LoadProcessConfig(sigma_slow=0.0)
        steps = np.diff(sample_load_trace(config, 100000.0, seed=3).values[:, 0])
        self.assertEqual(len(steps), 100000)
        self.assertAlmostEqual(float(np.var(steps)) / (0.05 / 3) ** 2, 1.0, delta=0.05)

    def test_fast_increments_are_uncorrelated(self):
        config = LoadProcessConfig(sigma_slow=0.0)
        for seed in range(4):
            steps = np.diff(sample_load_trace(config, 100000.0, seed=seed).values[:, 0])
            for lag in range(1, 6):
                with self.subTest(seed=seed, lag=lag):
                    r = np.corrcoef(steps[:-lag], steps[lag:])[0, 1]
                    self.assertLess(abs(r), 0.02)

    def test_walks_draw_from_independent_streams(self):
        both = LoadProcessConfig(sigma_fast=0.01, sigma_slow=0.02, fast_step=1.0, slow_step=1.0)
        fast_only = LoadProcessConfig(sigma_fast=0.01, sigma_slow=0.0, fast_step=1.0, slow_step=1.0)
        slow_only = LoadProcessConfig(sigma_fast=0.0, sigma_slow=0.02, fast_step=1.0, slow_step=1.0)
        for seed in range(3):
            with self.subTest(seed=seed):
                combined = sample_load_trace(both, 100000.0, seed)
                fast = sample_load_trace(fast_only, 100000.0, seed)
                slow = sample_load_trace(slow_only, 100000.0, seed)
                np.testing.assert_array_equal(combined.values, fast.values + slow.values)
                r = np.corrcoef(np.diff(fast.values[:, 0]), np.diff(slow.values[:, 0]))[0, 1]
                self.assertLess(abs(r), 0.02)

    def test_slow_walk_only_moves_on_its_own_grid(self):
        config = LoadProcessConfig(sigma_fast=0.0, slow_step=300.0)
        for seed in range(3):
            schedule = sample_load_trace(config, 3000.0, seed)
            moves = schedule.times[1:][np.diff(schedule.values[:, 0]) != 0.0]
            with self.subTest(seed=seed):
                self.assertEqual(len(moves), 10)
                np.testing.assert_allclose(moves % 300.0, 0.0)

    def test_zero_sigma_is_flat(self):
        schedule = sample_load_trace(LoadProcessConfig(sigma_fast=0.0, sigma_slow=0.0), 50.0, seed=1)
        self.assertTrue(np.all(schedule.values == 0.0))

    def test_clamp(self):
        config = LoadProcessConfig(sigma_fast=0.5, clamp=0.1)
        schedule = sample_load_trace(config, 500.0, seed=2)
        self.assertLessEqual(float(np.max(np.abs(schedule.values))), 0.1)

    def test_duration_must_be_positive(self):
        with self.assertRaises(ValidationError):
            sample_load_trace(LoadProcessConfig(), 0.0, seed=0)


class LoadInputsTests(SimpleTestCase):
    def test_inputs_vector_and_offset(self):
        schedule = sample_load_trace(LoadProcessConfig(), 10.0, seed=5)
        inputs = load_inputs(schedule, offset=3.0)
        np.testing.assert_array_equal(inputs(0.0), [schedule(3.0)[0], 0.0])

    def test_csv_export(self):
        schedule = sample_load_trace(LoadProcessConfig(), 5.0, seed=5)
        stream = io.StringIO()
        write_load_csv(schedule, stream)
        lines = stream.getvalue().splitlines()
        self.assertEqual(lines[0], ",".join(LOAD_CSV_HEADER))
        self.assertEqual(len(lines), 1 + len(schedule.times))
