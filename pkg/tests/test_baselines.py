import math
import unittest
from unittest import mock

import numpy as np

from peaklab.baselines import (
    KERNEL_LAGS,
    PowerLawParams,
    SpikeMParams,
    lr_forecast_hourly,
    lr_predict,
    lr_train,
    post_peak_cumulative,
    powerlaw_curve,
    powerlaw_fit,
    powerlaw_predict,
    powerlaw_r2,
    spikem_fit,
    spikem_r2,
    spikem_simulate,
)
from peaklab.errors import ParameterError
from peaklab.fitting import fit_peak, multistart_minimize
from peaklab.synthetic import default_corpus_spec, generate_synthetic_corpus
from tests.peaklab_test_utils import corpus_events, quiet_logging, relative_error


def spikem_params(**overrides):
    values = dict(u0=5000.0, beta=2e-4, t_b=40, s_b=800.0, eps0=2.0, p_a=0.3, p_s=4.0)
    values.update(overrides)
    return SpikeMParams(**values)


class SpikeMTest(unittest.TestCase):
    def test_zero_before_shock_hour(self):
        series = spikem_simulate(spikem_params(), 120)
        self.assertEqual(series.size, 120)
        self.assertTrue(np.all(series[:40] == 0.0))
        self.assertTrue(np.all(series >= 0.0))
        self.assertGreater(series[41], 0.0)

    def test_shock_hour_carries_background(self):
        p = spikem_params(p_a=0.5, p_s=3.0)
        series = spikem_simulate(p, 60)
        period = 1.0 - 0.5 * p.p_a * (1.0 + math.sin(2.0 * math.pi * (p.t_b + p.p_s) / 24.0))
        self.assertAlmostEqual(series[p.t_b], period * p.eps0, places=12)
        self.assertEqual(spikem_simulate(spikem_params(eps0=0.0), 60)[40], 0.0)

    def test_matches_direct_recurrence(self):
        p = spikem_params(t_b=5)
        horizon = 105
        x = [0.0] * horizon
        s = [0.0] * horizon
        s[p.t_b] = p.s_b
        u = p.u0

        def period(t):
            return 1.0 - 0.5 * p.p_a * (1.0 + math.sin(2.0 * math.pi * (t + p.p_s) / 24.0))

        for t in range(p.t_b - 1, horizon - 1):
            total = sum((x[k] + s[k]) * p.beta * (t + 1 - k) ** -1.5 for k in range(p.t_b, t + 1))
            x[t + 1] = period(t + 1) * (u * total + p.eps0)
            u = max(u - x[t + 1], 0.0)
        np.testing.assert_allclose(spikem_simulate(p, horizon), x, rtol=1e-10, atol=1e-12)

    def test_first_step_by_hand(self):
        p = spikem_params(p_a=0.0, eps0=0.0)
        series = spikem_simulate(p, 60)
        self.assertAlmostEqual(series[p.t_b + 1], p.u0 * p.s_b * p.beta, places=9)

    def test_susceptible_population_floor(self):
        # the first step exhausts the population; nothing is left to spread
        series = spikem_simulate(spikem_params(beta=5.0, eps0=0.0, p_a=0.0), 200)
        self.assertTrue(np.all(np.isfinite(series)))
        self.assertGreater(series[41], spikem_params().u0)
        self.assertTrue(np.all(series[42:] == 0.0))

    def test_kernel_truncation(self):
        self.assertEqual(KERNEL_LAGS, 504)
        p = spikem_params(t_b=0, eps0=0.0, p_a=0.0)
        self.assertEqual(spikem_simulate(p, 1).tolist(), [0.0])

    def test_rejects_bad_parameters(self):
        with self.assertRaises(ParameterError):
            spikem_params(p_a=1.5)
        with self.assertRaises(ParameterError):
            spikem_params(beta=-1.0)
        with self.assertRaises(ParameterError):
            spikem_simulate(spikem_params(t_b=50), 30)

    def test_dict_round_trip(self):
        p = spikem_params()
        self.assertEqual(SpikeMParams.from_dict(p.to_dict()), p)

    def test_every_shock_hour_is_searched_from_every_start(self):
        observed = spikem_simulate(spikem_params(t_b=60), 160)
        t_p = 100
        target = t_p - 5
        seen = []

        def loss(observed, tss, t_b, theta):
            seen.append(t_b)
            return abs(t_b - target) + 1.0

        with mock.patch("peaklab.baselines._spikem_loss", side_effect=loss), \
                mock.patch("peaklab.baselines.multistart_minimize", wraps=multistart_minimize) as minimize:
            fit = spikem_fit(observed, t_p, options={"maxiter": 5})
        self.assertEqual(sorted(set(seen)), list(range(t_p - 48, t_p + 1)))
        self.assertEqual(minimize.call_count, 49)
        for call in minimize.call_args_list:
            self.assertEqual(len(call.args[1]), 2)
        self.assertEqual(fit.params.t_b, target)

    def test_shock_hour_search_clipped_at_series_start(self):
        seen = set()

        def loss(observed, tss, t_b, theta):
            seen.add(t_b)
            return 1.0

        with mock.patch("peaklab.baselines._spikem_loss", side_effect=loss):
            fit = spikem_fit(spikem_simulate(spikem_params(t_b=2), 40), 10, options={"maxiter": 5})
        self.assertEqual(seen, set(range(0, 11)))
        self.assertEqual(fit.params.t_b, 0)

    def test_fit_own_curve(self):
        truth = spikem_params(t_b=30)
        observed = spikem_simulate(truth, 150)
        t_p = int(np.argmax(observed))
        fit = spikem_fit(observed, t_p)
        self.assertTrue(t_p - 48 <= fit.params.t_b <= t_p)
        self.assertGreater(fit.r2, 0.5)
        self.assertTrue(math.isfinite(spikem_r2(observed, fit.params, t_p)))


class PowerLawTest(unittest.TestCase):
    def setUp(self):
        self.truth = PowerLawParams(a_minus=300.0, gamma_minus=-0.8, a_plus=900.0, gamma_plus=-1.2, t_p=100)
        hours = np.arange(240, dtype=float)
        self.observed = np.zeros(240)
        mask = hours != 100
        self.observed[mask] = powerlaw_curve(self.truth, hours[mask])
        self.observed[100] = 5000.0

    def test_recovers_exponents(self):
        fit = powerlaw_fit(self.observed, 100)
        self.assertAlmostEqual(fit.gamma_minus, -0.8, places=4)
        self.assertAlmostEqual(fit.gamma_plus, -1.2, places=4)
        self.assertLess(relative_error(fit.a_plus, 900.0), 1e-3)
        self.assertAlmostEqual(powerlaw_r2(self.observed, fit), 1.0, places=6)

    def test_last_hour_limits_the_fit(self):
        fit = powerlaw_fit(self.observed, 100, last_hour=130)
        self.assertAlmostEqual(fit.gamma_plus, -1.2, places=4)

    def test_amplitude_is_nonnegative(self):
        observed = np.zeros(100)
        observed[50] = 10.0
        fit = powerlaw_fit(observed, 50)
        self.assertGreaterEqual(fit.a_plus, 0.0)
        self.assertGreaterEqual(fit.a_minus, 0.0)

    def test_undefined_at_peak(self):
        with self.assertRaises(ParameterError):
            powerlaw_curve(self.truth, [100])
        with self.assertRaises(ParameterError):
            powerlaw_predict(self.truth, [0, 1])
        np.testing.assert_allclose(powerlaw_predict(self.truth, [1, 4]), [900.0, 900.0 * 4 ** -1.2])


class LogLinearTest(unittest.TestCase):
    def test_deterministic_growth(self):
        offsets = np.arange(1, 169, dtype=float)
        cumulatives = [scale * offsets for scale in (10.0, 50.0, 200.0)]
        table = lr_train(cumulatives, t_obs=24)
        self.assertEqual(table.n_events, 3)
        self.assertEqual(table.offsets[0], 25)
        self.assertAlmostEqual(table.row(48)[0], math.log(2.0), places=12)
        self.assertAlmostEqual(table.row(48)[1], 0.0, places=12)
        predicted = lr_predict(table, 24.0 * 7.0, offsets=[168])
        self.assertAlmostEqual(float(predicted[0]), 168.0 * 7.0, places=6)

    def test_lognormal_mean_correction(self):
        offsets = np.arange(1, 11, dtype=float)
        cumulatives = [offsets.copy(), offsets * np.where(offsets > 2, 2.0, 1.0)]
        table = lr_train(cumulatives, t_obs=2, horizon=10)
        alpha, sigma2 = table.row(10)
        self.assertGreater(sigma2, 0.0)
        self.assertAlmostEqual(float(lr_predict(table, 1.0, [10])[0]), math.exp(alpha + sigma2 / 2.0), places=12)

    def test_events_without_early_views_are_dropped(self):
        offsets = np.arange(1, 169, dtype=float)
        late = np.where(offsets > 30, offsets, 0.0)
        table = lr_train([offsets, late], t_obs=24)
        self.assertEqual(table.n_events, 1)
        with self.assertRaises(ParameterError):
            lr_train([late], t_obs=24)

    def test_hourly_forecast_sums_to_cumulative(self):
        offsets = np.arange(1, 169, dtype=float)
        table = lr_train([offsets * 3.0, offsets ** 1.5], t_obs=12)
        hourly = lr_forecast_hourly(table, 40.0)
        self.assertEqual(hourly.size, 168 - 12)
        self.assertAlmostEqual(40.0 + hourly.sum(), float(lr_predict(table, 40.0)[-1]), places=6)

    def test_cumulative_needs_full_horizon(self):
        self.assertEqual(post_peak_cumulative(np.arange(10.0), 2, 5).tolist(), [3.0, 7.0, 12.0, 18.0, 25.0])
        with self.assertRaises(ParameterError):
            post_peak_cumulative(np.ones(100), 50, 168)
        with self.assertRaises(ParameterError):
            lr_train([np.ones(168)], t_obs=168)


class FitQualityTest(unittest.TestCase):
    def test_peak_model_fits_its_corpus_best(self):
        corpus = generate_synthetic_corpus(default_corpus_spec(), corpus_events(3), seed=31)
        r2 = {"proposed": [], "spikem": [], "powerlaw": []}
        with quiet_logging():
            for window in corpus.windows():
                t_p = window.peak.t_p
                r2["proposed"].append(fit_peak(window.series, window.peak).r2)
                spikem = spikem_fit(window.series, t_p, options={"maxiter": 60})
                r2["spikem"].append(spikem_r2(window.series, spikem.params, t_p))
                r2["powerlaw"].append(powerlaw_r2(window.series, powerlaw_fit(window.series, t_p)))
        medians = {name: float(np.median(values)) for name, values in r2.items()}
        self.assertGreater(medians["proposed"], medians["spikem"], medians)
        self.assertGreater(medians["proposed"], medians["powerlaw"], medians)


if __name__ == "__main__":
    unittest.main()
