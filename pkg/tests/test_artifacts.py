import json
import math
import unittest

import numpy as np

from peaklab import artifacts
from peaklab.baselines import PowerLawParams, SpikeMFit, SpikeMParams
from peaklab.config import config_hash, default_config
from peaklab.errors import DependencyError
from peaklab.ingestion import Outcome
from tests.peaklab_test_utils import make_params, make_window, temp_out_dir, truth_fit


class ArtifactTest(unittest.TestCase):
    def setUp(self):
        self.config = default_config(seed=3)

    def test_csv_header_and_nan(self):
        with temp_out_dir() as root:
            path = artifacts.write_csv(root / "x.csv", ("a", "b"), [dict(a=1.5, b=float("nan"))], self.config)
            lines = path.read_text(encoding="utf-8").splitlines()
            rows = artifacts.read_csv(path)
        self.assertEqual(lines[0], f"# config_hash={config_hash(self.config)} seed=3")
        self.assertEqual(lines[1:], ["a,b", "1.5,nan"])
        self.assertEqual(rows, [dict(a="1.5", b="nan")])

    def test_json_nan_is_null(self):
        with temp_out_dir() as root:
            path = artifacts.write_json(root / "x.json", dict(value=float("nan"), items=[1.0, float("inf")]), self.config)
            data = artifacts.read_json(path)
        self.assertIsNone(data["value"])
        self.assertEqual(data["items"], [1.0, None])
        self.assertEqual(data["seed"], 3)
        self.assertEqual(data["config_hash"], config_hash(self.config))

    def test_jsonl_header_is_skipped(self):
        with temp_out_dir() as root:
            artifacts.write_jsonl(root / "x.jsonl", [dict(k=1), dict(k=2)], self.config)
            first = json.loads((root / "x.jsonl").read_text(encoding="utf-8").splitlines()[0])
            records = artifacts.read_jsonl(root / "x.jsonl")
        self.assertIn("header", first)
        self.assertEqual(records, [dict(k=1), dict(k=2)])

    def test_missing_artifact_names_producer(self):
        with temp_out_dir() as root:
            with self.assertRaises(DependencyError) as ctx:
                artifacts.load_fits(root / artifacts.FITS_FILE)
        self.assertEqual(ctx.exception.command, "fit")
        self.assertIn("peaklab fit", str(ctx.exception))

    def test_windows_round_trip(self):
        params = make_params()
        windows = [
            make_window(params, seed=1, article="Team_A", category="football",
                        outcome=Outcome(result="win", stage="final", opponent="Team_B")),
            make_window(params, seed=2, article="Some/Film", category="film"),
        ]
        with temp_out_dir() as root:
            artifacts.save_windows(root, windows, self.config)
            loaded = artifacts.load_windows(root)
        self.assertEqual(len(loaded), 2)
        for original, copy in zip(windows, loaded):
            self.assertEqual(copy.event, original.event)
            self.assertEqual(copy.peak, original.peak)
            self.assertEqual(copy.series.start, original.series.start)
            np.testing.assert_array_equal(copy.series.counts, original.series.counts)

    def test_fits_round_trip(self):
        params = make_params()
        windows = [make_window(params, seed=s, article=f"Event_{s}") for s in range(2)]
        fits = {windows[0].event.key: truth_fit(params, r2=float("nan")), windows[1].event.key: ValueError("boom")}
        with temp_out_dir() as root:
            artifacts.save_fits(root / artifacts.FITS_FILE, windows, fits, self.config)
            loaded = artifacts.load_fits(root / artifacts.FITS_FILE)
            records = artifacts.read_jsonl(root / artifacts.FITS_FILE)
        self.assertEqual(list(loaded), [windows[0].event.key])
        self.assertEqual(loaded[windows[0].event.key].params, params)
        self.assertTrue(math.isnan(loaded[windows[0].event.key].r2))
        self.assertEqual(records[1]["error"], "boom")

    def test_baseline_fits_round_trip(self):
        params = make_params()
        window = make_window(params, seed=4)
        key = window.event.key
        spikem = {key: SpikeMFit(SpikeMParams(1000.0, 1e-3, 240, 50.0, 1.0, 0.2, 3.0), 0.8, True)}
        powerlaw = {key: PowerLawParams(10.0, -0.5, 20.0, -1.0, params.t_p)}
        with temp_out_dir() as root:
            artifacts.save_spikem_fits(root / artifacts.SPIKEM_FITS_FILE, [window], spikem, self.config)
            artifacts.save_powerlaw_fits(root / artifacts.POWERLAW_FITS_FILE, [window], powerlaw, self.config)
            self.assertEqual(artifacts.load_spikem_fits(root / artifacts.SPIKEM_FITS_FILE), spikem)
            self.assertEqual(artifacts.load_powerlaw_fits(root / artifacts.POWERLAW_FITS_FILE), powerlaw)


if __name__ == "__main__":
    unittest.main()
