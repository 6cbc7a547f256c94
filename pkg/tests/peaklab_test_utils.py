import contextlib
import logging
import os
import shutil
import tempfile
from datetime import date
from pathlib import Path

import numpy as np

from peaklab.fitting import PeakFit, PrepeakFit
from peaklab.ingestion import EventRecord, EventWindow, PeakLocation, TimeSeries, WINDOW_HOURS
from peaklab.model_core import PeakParams, model_curve
from peaklab.seeding import derive_rng
from peaklab.synthetic import simulate_counts

REPO_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_T_P = 252


def env_int(name, default):
    """Corpus sizes for the slower statistical tests; raise them for a thorough run."""
    return int(os.environ.get(f"PEAKLAB_TEST_{name}", str(default)))


def corpus_events(default=30):
    return env_int("EVENTS", default)


def trial_count(default=5):
    return env_int("TRIALS", default)


def restart_count(default=3):
    return env_int("RESTARTS", default)


def make_params(**overrides):
    values = dict(
        a_minus=800.0,
        b_minus=60.0,
        tau_minus=6.0,
        a_plus=2000.0,
        b_plus=90.0,
        tau_plus=12.0,
        alpha_c=0.5,
        t_c=18.0,
        t_p=DEFAULT_T_P,
    )
    values.update(overrides)
    return PeakParams(**values)


def exact_curve(params, n_hours=WINDOW_HOURS, peak_value=None):
    """Noise-free model values with a finite value at the peak hour."""
    values = model_curve(params, n_hours)
    neighbours = [values[i] for i in (params.t_p - 1, params.t_p + 1) if 0 <= i < n_hours]
    values[params.t_p] = peak_value if peak_value is not None else 2.0 * max(neighbours)
    return values


def truth_fit(params, r2=1.0):
    return PeakFit(params=params, r2=r2, residual_variance=0.0, converged=True, n_points=WINDOW_HOURS - 1)


def truth_prepeak(params, noise_variance=1.0):
    return PrepeakFit(
        alpha_c=params.alpha_c,
        t_c=params.t_c,
        a_minus=params.a_minus,
        b_minus=params.b_minus,
        tau_minus=params.tau_minus,
        noise_variance=noise_variance,
        converged=True,
        tau_identifiable=True,
        n_points=params.t_p,
    )


def make_window(params, seed=0, category="election", event_date=date(2019, 3, 1), article=None, outcome=None):
    """EventWindow of Poisson counts around ``params``, peak at ``params.t_p``."""
    counts = simulate_counts(params, derive_rng(seed, "test-window", article or category))
    event = EventRecord(
        article=article or f"Test_{category}_{seed}",
        category=category,
        event_date=event_date,
        outcome=outcome,
    )
    series = TimeSeries(start=event.window_start, counts=counts)
    return EventWindow(event=event, series=series, peak=PeakLocation(params.t_p, int(counts[params.t_p])))


def relative_error(estimate, truth):
    return abs(estimate - truth) / abs(truth)


@contextlib.contextmanager
def temp_out_dir():
    path = Path(tempfile.mkdtemp(prefix="peaklab_test_"))
    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)


@contextlib.contextmanager
def quiet_logging(level=logging.ERROR):
    logger = logging.getLogger("peaklab")
    previous = logger.level
    logger.setLevel(level)
    try:
        yield
    finally:
        logger.setLevel(previous)


def blobs(centers, per_blob, spread, seed):
    """Gaussian blobs around ``centers``; returns (features, labels)."""
    rng = np.random.default_rng(seed)
    features, labels = [], []
    for label, center in enumerate(centers):
        center = np.asarray(center, dtype=float)
        features.append(center + spread * rng.standard_normal((per_blob, center.size)))
        labels.extend([label] * per_blob)
    return np.vstack(features), np.array(labels)
