import math
import unittest
from unittest import mock

import numpy as np

from peaklab.errors import ParameterError
from peaklab.fitting import (
    TAU_BOUNDS,
    PeakFit,
    fit_peak,
    fit_prepeak,
    fitted_curve,
    multistart_minimize,
    r_squared,
)
from peaklab.model_core import PERIOD_HOURS
from tests.peaklab_test_utils import exact_curve, make_params, make_window, relative_error, trial_count


def phase_error(a, b):
    diff = abs(a - b) % PERIOD_HOURS
    return min(diff, PERIOD_HOURS - diff)


class RSquaredTest(unittest.TestCase):
    def test_perfect_fit(self):
        values = np.array([1.0, 4.0, 2.0, 8.0])
        self.assertEqual(r_squared(values, values), 1.0)

    def test_peak_hour_excluded(self):
        observed = np.array([1.0, 2.0, 1000.0, 2.0, 1.0])
        fitted = np.array([1.0, 2.0, np.nan, 2.0, 1.0])
        self.assertEqual(r_squared(observed, fitted, t_p=2), 1.0)

    def test_constant_series_is_undefined(self):
        self.assertTrue(math.isnan(r_squared(np.full(10, 5.0), np.full(10, 5.0))))


class FitPeakTest(unittest.TestCase):
    def test_recovers_noise_free_parameters(self):
        truth = make_params()
        fit = fit_peak(exact_curve(truth), truth.t_p)
        self.assertGreater(fit.r2, 1.0 - 1e-9)
        for name in ("tau_minus", "tau_plus", "a_minus", "a_plus", "b_minus", "b_plus"):
            self.assertLess(relative_error(getattr(fit.params, name), getattr(truth, name)), 1e-5, name)
        self.assertAlmostEqual(fit.params.alpha_c, truth.alpha_c, delta=1e-5)
        self.assertLess(phase_error(fit.params.t_c, truth.t_c), 1e-4)
        self.assertEqual(fit.params.t_p, truth.t_p)

    def test_poisson_counts(self):
        truth = make_params(tau_minus=3.0, tau_plus=20.0)
        window = make_window(truth, seed=4)
        fit = fit_peak(window.series, window.peak)
        self.assertTrue(fit.converged)
        self.assertGreater(fit.r2, 0.9)
        self.assertLess(relative_error(fit.params.tau_plus, truth.tau_plus), 0.25)
        self.assertEqual(fit.n_points, len(window.series) - 1)
        curve = fitted_curve(fit.params, len(window.series))
        self.assertAlmostEqual(r_squared(window.series.values, curve, window.peak.t_p), fit.r2, places=6)

    def test_recovery_over_poisson_trials(self):
        trials = trial_count(20)
        rng = np.random.default_rng(17)
        recovered, r2 = 0, []
        for trial in range(trials):
            truth = make_params(
                a_minus=2500.0, b_minus=120.0, tau_minus=8.0,
                a_plus=4500.0, b_plus=200.0, tau_plus=15.0,
                alpha_c=0.4, t_c=float(rng.uniform(0.0, 24.0)),
            )
            window = make_window(truth, seed=trial, article=f"Trial_{trial}")
            fit = fit_peak(window.series, window.peak)
            r2.append(fit.r2)
            names = ("a_minus", "a_plus", "tau_minus", "tau_plus")
            if all(relative_error(getattr(fit.params, n), getattr(truth, n)) < 0.10 for n in names):
                recovered += 1
        self.assertGreaterEqual(recovered / trials, 0.95)
        self.assertGreaterEqual(float(np.median(r2)), 0.95)

    def test_reported_r2_describes_reported_params(self):
        truth = make_params()
        values = exact_curve(truth)

        def runaway(objective, starts, options=None):
            x, value, ok = multistart_minimize(objective, starts, options)
            if len(x) == 8:
                x = np.array(x, dtype=float)
                x[5] = math.log(1e6)
            return x, value, ok

        with mock.patch("peaklab.fitting.multistart_minimize", side_effect=runaway):
            fit = fit_peak(values, truth.t_p)
        self.assertEqual(fit.params.tau_plus, TAU_BOUNDS[1])
        curve = fitted_curve(fit.params, values.size)
        self.assertAlmostEqual(fit.r2, r_squared(values, curve, truth.t_p), places=9)

    def test_peak_hour_value_is_ignored(self):
        truth = make_params()
        low = fit_peak(exact_curve(truth, peak_value=0.0), truth.t_p)
        high = fit_peak(exact_curve(truth, peak_value=1e7), truth.t_p)
        self.assertAlmostEqual(low.params.tau_plus, high.params.tau_plus, places=4)

    def test_rejects_short_series_and_edge_peaks(self):
        with self.assertRaises(ParameterError):
            fit_peak(np.ones(40), 20)
        with self.assertRaises(ParameterError):
            fit_peak(np.ones(100), 0)
        with self.assertRaises(ParameterError):
            fit_peak(np.ones(100), 99)

    def test_serialization_keeps_undefined_r2(self):
        fit = PeakFit(make_params(), float("nan"), 1.0, False, 500)
        loaded = PeakFit.from_dict(fit.to_dict())
        self.assertTrue(math.isnan(loaded.r2))
        self.assertEqual(loaded.params, fit.params)


class FitPrepeakTest(unittest.TestCase):
    def test_recovers_anticipation(self):
        truth = make_params()
        prepeak = fit_prepeak(exact_curve(truth), truth.t_p)
        self.assertLess(relative_error(prepeak.tau_minus, truth.tau_minus), 0.02)
        self.assertLess(relative_error(prepeak.a_minus, truth.a_minus), 0.02)
        self.assertAlmostEqual(prepeak.alpha_c, truth.alpha_c, delta=0.01)
        self.assertTrue(prepeak.tau_identifiable)
        self.assertEqual(prepeak.noise_variance, 1.0)
        self.assertEqual(prepeak.n_points, truth.t_p)

    def test_noise_estimate_uses_reported_anticipation(self):
        truth = make_params(tau_minus=3.0)
        window = make_window(truth, seed=6)
        prepeak = fit_prepeak(window.series, window.peak)
        pre = window.series.values[: truth.t_p].astype(float)
        hours = np.arange(truth.t_p, dtype=float)
        wave = 1.0 + prepeak.alpha_c * np.cos(2.0 * np.pi * (hours - prepeak.t_c) / 24.0)
        model = wave * (prepeak.a_minus * np.exp((hours - truth.t_p) / prepeak.tau_minus) + prepeak.b_minus)
        rss = float(np.sum((pre - model) ** 2))
        self.assertAlmostEqual(prepeak.noise_variance, max(rss / (truth.t_p - 5), 1.0), delta=1e-6 * rss)
        self.assertAlmostEqual(prepeak.level, float(pre.mean()), places=9)

    def test_flat_anticipation_is_not_identifiable(self):
        truth = make_params(a_minus=0.0)
        prepeak = fit_prepeak(exact_curve(truth), truth.t_p)
        self.assertFalse(prepeak.tau_identifiable)
        self.assertLess(relative_error(prepeak.b_minus, truth.b_minus), 0.01)

    def test_needs_two_days_before_peak(self):
        with self.assertRaises(ParameterError):
            fit_prepeak(np.ones(200), 30)


if __name__ == "__main__":
    unittest.main()
