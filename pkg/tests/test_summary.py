import math
import unittest
from datetime import date

import numpy as np

from peaklab.ingestion import EventRecord, Outcome
from peaklab.model_core import combine_circadian
from peaklab.summary import (
    category_parameter_table,
    corpus_report,
    disappointed_loser_rates,
    quartile_summary,
    region_shares,
    response_class,
    result_parameter_table,
    stage_parameter_table,
    view_totals,
)
from tests.peaklab_test_utils import make_params, make_window, truth_fit


def event(category="football", result=None, stage=None, index=0):
    outcome = Outcome(result=result, stage=stage, opponent="Other") if result or stage else None
    return EventRecord(f"Event_{index}", category, date(2019, 1, 1), outcome=outcome)


class QuartileTest(unittest.TestCase):
    def test_values(self):
        stats = quartile_summary([1.0, 2.0, 3.0, 4.0, 5.0, float("nan")])
        self.assertEqual(stats, dict(n=5, median=3.0, q25=2.0, q75=4.0))

    def test_empty(self):
        stats = quartile_summary([])
        self.assertEqual(stats["n"], 0)
        self.assertTrue(math.isnan(stats["median"]))


class TableTest(unittest.TestCase):
    def test_category_table(self):
        fits = [truth_fit(make_params(tau_plus=t)) for t in (2.0, 4.0, 6.0)] + [None]
        events = [event("film", index=i) for i in range(3)] + [event("film", index=3)]
        table = category_parameter_table(fits, events)
        self.assertEqual(len(table), 1)
        self.assertEqual(table[0]["category"], "film")
        self.assertEqual(table[0]["events"], 3)
        self.assertEqual(table[0]["tau_plus_median"], 4.0)

    def test_categories_in_canonical_order(self):
        fits = [truth_fit(make_params())] * 3
        events = [event("holiday"), event("election"), event("custom")]
        self.assertEqual([r["category"] for r in category_parameter_table(fits, events)], ["election", "holiday", "custom"])

    def test_unconverged_fits_are_left_out(self):
        fit = truth_fit(make_params())
        failed = type(fit)(fit.params, fit.r2, 0.0, False, fit.n_points)
        table = category_parameter_table([fit, failed], [event("film"), event("film", index=1)])
        self.assertEqual(table[0]["events"], 1)

    def test_stage_and_result_tables(self):
        fits = [truth_fit(make_params(a_plus=a)) for a in (100.0, 300.0, 900.0)]
        events = [
            event(result="win", stage="group"),
            event(result="lose", stage="group", index=1),
            event(result="lose", stage="final", index=2),
        ]
        stages = stage_parameter_table(fits, events)
        self.assertEqual([row["stage"] for row in stages], ["group", "final"])
        self.assertEqual(stages[0]["a_plus_median"], 200.0)
        results = result_parameter_table(fits, events)
        self.assertEqual([row["result"] for row in results], ["win", "lose"])
        self.assertEqual(results[1]["events"], 2)


class ResponseClassTest(unittest.TestCase):
    def test_threshold(self):
        self.assertEqual(response_class(make_params(tau_plus=1.5)), "disappointed")
        self.assertEqual(response_class(truth_fit(make_params(tau_plus=2.0))), "excited")

    def test_disappointed_rates(self):
        fits = [truth_fit(make_params(tau_plus=t)) for t in (1.0, 5.0, 1.0, 1.5, 8.0)]
        events = [
            event(result="win"),
            event(result="win", index=1),
            event(result="lose", index=2),
            event(result="lose", index=3),
            event(result="lose", index=4),
        ]
        rates = disappointed_loser_rates(fits, events)
        self.assertEqual(rates["win"], dict(disappointed=1, total=2, rate=0.5))
        self.assertAlmostEqual(rates["lose"]["rate"], 2.0 / 3.0)
        self.assertNotIn("draw", rates)


class RegionTest(unittest.TestCase):
    def test_shares(self):
        us = combine_circadian((0.8, 0.1, 0.1))
        uk = combine_circadian((0.1, 0.8, 0.1))
        fits = [truth_fit(make_params(alpha_c=alpha, t_c=t_c)) for alpha, t_c in (us, us, uk)]
        shares = region_shares(fits, [event("film", index=i) for i in range(3)])
        self.assertAlmostEqual(shares["film"]["us"], 2.0 / 3.0)
        self.assertAlmostEqual(shares["film"]["uk"], 1.0 / 3.0)
        self.assertEqual(shares["film"]["au"], 0.0)


class ReportTest(unittest.TestCase):
    def test_view_totals(self):
        counts = np.array([1, 2, 10, 3, 4])
        self.assertEqual(view_totals(counts, 2), (3, 7))

    def test_report_sections(self):
        params = make_params()
        windows = [
            make_window(params, seed=i, article=f"Team_{i}", category="football",
                        outcome=Outcome(result="win", stage="group", opponent="X"))
            for i in range(2)
        ]
        fits = [truth_fit(params), None]
        report = corpus_report(fits, [w.event for w in windows], windows)
        self.assertEqual(report["events"], 2)
        self.assertEqual(report["converged"], 1)
        for key in ("categories", "stages", "results", "disappointed", "regions", "view_totals"):
            self.assertIn(key, report)
        self.assertEqual(report["view_totals"]["excited"]["before"]["n"], 1)


if __name__ == "__main__":
    unittest.main()
