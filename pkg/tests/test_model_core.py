import math
import unittest

import numpy as np
from scipy import integrate

from peaklab.errors import ParameterError, UndefinedRatioError
from peaklab.model_core import (
    RHO_WINDOW_HOURS,
    PeakParams,
    anticipation_response_ratio,
    combine_circadian,
    decompose_circadian,
    envelope,
    eval_circadian,
    eval_envelope,
    eval_model,
    model_curve,
)
from tests.peaklab_test_utils import make_params, relative_error


def random_params(rng, tau_range=(0.5, 200.0)):
    log_tau = (math.log(tau_range[0]), math.log(tau_range[1]))
    return PeakParams(
        a_minus=float(np.exp(rng.uniform(3.0, 9.0))),
        b_minus=float(np.exp(rng.uniform(1.0, 6.0))),
        tau_minus=float(np.exp(rng.uniform(*log_tau))),
        a_plus=float(np.exp(rng.uniform(3.0, 9.0))),
        b_plus=float(np.exp(rng.uniform(1.0, 6.0))),
        tau_plus=float(np.exp(rng.uniform(*log_tau))),
        alpha_c=float(rng.uniform(0.0, 0.9)),
        t_c=float(rng.uniform(0.0, 24.0)),
        t_p=int(rng.integers(48, 432)),
    )


def direct_model(p, t):
    c = 1.0 + p.alpha_c * math.cos(2.0 * math.pi * (t - p.t_c) / 24.0)
    if t < p.t_p:
        return c * (p.a_minus * math.exp((t - p.t_p) / p.tau_minus) + p.b_minus)
    return c * (p.a_plus * math.exp(-(t - p.t_p) / p.tau_plus) + p.b_plus)


class PeakParamsTest(unittest.TestCase):
    def test_rejects_invalid_values(self):
        with self.assertRaises(ParameterError):
            make_params(a_minus=-1.0)
        with self.assertRaises(ParameterError):
            make_params(tau_plus=0.0)
        with self.assertRaises(ParameterError):
            make_params(alpha_c=1.0)
        with self.assertRaises(ParameterError):
            make_params(b_plus=float("nan"))

    def test_phase_wraps_to_one_day(self):
        self.assertAlmostEqual(make_params(t_c=25.5).t_c, 1.5)
        self.assertAlmostEqual(make_params(t_c=-2.0).t_c, 22.0)

    def test_dict_round_trip(self):
        params = make_params(t_c=7.25)
        self.assertEqual(PeakParams.from_dict(params.to_dict()), params)

    def test_from_dict_names_missing_fields(self):
        data = make_params().to_dict()
        del data["tau_plus"]
        with self.assertRaisesRegex(ParameterError, "tau_plus"):
            PeakParams.from_dict(data)


class ModelEvaluationTest(unittest.TestCase):
    def test_product_of_circadian_and_envelope(self):
        p = make_params()
        for t in (10.0, p.t_p - 1.0, p.t_p + 1.0, 400.0):
            c = 1.0 + p.alpha_c * math.cos(2.0 * math.pi * (t - p.t_c) / 24.0)
            if t < p.t_p:
                d = p.a_minus * math.exp((t - p.t_p) / p.tau_minus) + p.b_minus
            else:
                d = p.a_plus * math.exp(-(t - p.t_p) / p.tau_plus) + p.b_plus
            self.assertAlmostEqual(eval_model(p, t), c * d, places=9)

    def test_random_draws_match_direct_evaluation(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            p = random_params(rng)
            hours = np.array([t for t in range(480) if t != p.t_p], dtype=float)
            got = eval_model(p, hours)
            want = np.array([direct_model(p, t) for t in hours])
            self.assertLess(float(np.max(np.abs(got - want) / np.abs(want))), 1e-12, p)

    def test_undefined_at_peak_hour(self):
        p = make_params()
        with self.assertRaises(ParameterError):
            envelope(p, [p.t_p])
        curve = model_curve(p, 504)
        self.assertTrue(math.isnan(curve[p.t_p]))
        self.assertEqual(int(np.isnan(curve).sum()), 1)

    def test_envelope_approaches_baselines(self):
        p = make_params(tau_minus=2.0, tau_plus=3.0)
        self.assertAlmostEqual(float(envelope(p, [0.0])[0]), p.b_minus, places=6)
        self.assertAlmostEqual(float(envelope(p, [503.0])[0]), p.b_plus, places=6)

    def test_scalar_evaluation(self):
        p = make_params(alpha_c=0.0)
        self.assertEqual(eval_circadian(p, 7.0), 1.0)
        self.assertIsInstance(eval_envelope(p, 100.0), float)
        self.assertAlmostEqual(eval_model(p, 100.0), eval_envelope(p, 100.0), places=12)
        with self.assertRaises(ParameterError):
            eval_envelope(p, p.t_p)

    def test_envelope_is_monotone_on_each_side(self):
        p = make_params()
        before = eval_envelope(p, np.arange(0, p.t_p))
        after = eval_envelope(p, np.arange(p.t_p + 1, 504))
        self.assertTrue(np.all(np.diff(before) >= 0.0))
        self.assertTrue(np.all(np.diff(after) <= 0.0))
        self.assertTrue(np.all(eval_model(p, np.arange(0, p.t_p)) > 0.0))


class RatioTest(unittest.TestCase):
    def test_matches_numerical_integration(self):
        p = make_params(tau_minus=30.0, tau_plus=4.0)
        m = RHO_WINDOW_HOURS
        s_minus, _ = integrate.quad(lambda s: p.a_minus * math.exp(s / p.tau_minus) + p.b_minus, -m, 0.0)
        s_plus, _ = integrate.quad(lambda s: p.a_plus * math.exp(-s / p.tau_plus) + p.b_plus, 0.0, m)
        self.assertAlmostEqual(anticipation_response_ratio(p), s_minus / s_plus, places=9)

    def test_random_draws_match_trapezoid_rule(self):
        rng = np.random.default_rng(7)
        m = RHO_WINDOW_HOURS
        s = np.linspace(0.0, m, int(round(m / 0.01)) + 1)
        for _ in range(1000):
            p = random_params(rng, tau_range=(5.0, 200.0))
            s_minus = integrate.trapezoid(p.a_minus * np.exp(-s / p.tau_minus) + p.b_minus, s)
            s_plus = integrate.trapezoid(p.a_plus * np.exp(-s / p.tau_plus) + p.b_plus, s)
            self.assertLess(relative_error(anticipation_response_ratio(p), s_minus / s_plus), 1e-6, p)

    def test_symmetric_envelope_gives_one(self):
        p = make_params(a_plus=800.0, b_plus=60.0, tau_plus=6.0)
        self.assertAlmostEqual(anticipation_response_ratio(p), 1.0, places=12)

    def test_zero_response_area_is_undefined(self):
        with self.assertRaises(UndefinedRatioError):
            anticipation_response_ratio(make_params(a_plus=0.0, b_plus=0.0))

    def test_window_must_be_positive(self):
        with self.assertRaises(ParameterError):
            anticipation_response_ratio(make_params(), window_M=0.0)


class DecompositionTest(unittest.TestCase):
    def test_recovers_planted_mix(self):
        for weights in ((0.6, 0.3, 0.1), (0.1, 0.8, 0.1), (0.2, 0.2, 0.6)):
            alpha_c, t_c = combine_circadian(weights)
            mix = decompose_circadian(alpha_c, t_c)
            for got, want in zip(mix.weights, weights):
                self.assertAlmostEqual(got, want, places=6)

    def test_dominant_region(self):
        alpha_c, t_c = combine_circadian((0.05, 0.9, 0.05))
        self.assertEqual(decompose_circadian(alpha_c, t_c).dominant(), "uk")

    def test_weights_stay_on_simplex(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            mix = decompose_circadian(float(rng.uniform(0.0, 0.99)), float(rng.uniform(0.0, 24.0)))
            self.assertGreaterEqual(min(mix.weights), 0.0)
            self.assertAlmostEqual(sum(mix.weights), 1.0, places=9)


if __name__ == "__main__":
    unittest.main()
