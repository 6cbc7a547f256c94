"""Synthetic event corpora with known generating parameters.

Counts are Poisson draws around the peak model, with an extra spike at the peak
hour. Every event draws from its own derived random stream, so a corpus is
identical for identical seeds regardless of size or ordering of consumers.
"""
import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Tuple

import numpy as np

from peaklab.errors import ConfigError
from peaklab.ingestion import (
    DAYS_BEFORE,
    PEAK_SEARCH_HOURS,
    WINDOW_HOURS,
    EventRecord,
    EventWindow,
    Outcome,
    TimeSeries,
    locate_peak,
)
from peaklab.model_core import PeakParams, combine_circadian, model_curve
from peaklab.seeding import derive_rng

BASE_DATE = date(2018, 1, 1)
PEAK_SPIKE = 1.6


@dataclass(frozen=True)
class LogNormal:
    median: float
    sigma: float

    def validate(self, name):
        if not (self.median > 0 and math.isfinite(self.median)):
            raise ConfigError(f"{name}: log-normal median must be positive, got {self.median}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"{name}: log-normal sigma must be >= 0, got {self.sigma}")

    def sample(self, rng):
        return float(self.median * math.exp(self.sigma * rng.standard_normal()))


@dataclass(frozen=True)
class Link:
    """log q_plus = slope * log q_minus + intercept + N(0, sigma^2)."""

    slope: float
    intercept: float
    sigma: float

    def validate(self, name):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"{name}: link sigma must be >= 0, got {self.sigma}")
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise ConfigError(f"{name}: link coefficients must be finite")

    def sample(self, rng, anticipation_value):
        log_value = (
            self.slope * math.log(anticipation_value)
            + self.intercept
            + self.sigma * rng.standard_normal()
        )
        return float(math.exp(log_value))

    @classmethod
    def through(cls, minus_median, plus_median, slope, sigma):
        """Link whose line passes through the two category medians."""
        return cls(slope, math.log(plus_median) - slope * math.log(minus_median), sigma)


@dataclass(frozen=True)
class CategorySpec:
    name: str
    a_minus: LogNormal
    b_minus: LogNormal
    tau_minus: LogNormal
    a_plus: object
    b_plus: object
    tau_plus: object
    alpha_c: Tuple[float, float] = (0.3, 0.7)
    regions: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self):
        for name in ("a_minus", "b_minus", "tau_minus"):
            value = getattr(self, name)
            if not isinstance(value, LogNormal):
                raise ConfigError(f"{self.name}.{name} must be a LogNormal distribution")
            value.validate(f"{self.name}.{name}")
        for name in ("a_plus", "b_plus", "tau_plus"):
            value = getattr(self, name)
            if not isinstance(value, (LogNormal, Link)):
                raise ConfigError(f"{self.name}.{name} must be a LogNormal or a Link")
            value.validate(f"{self.name}.{name}")
        low, high = self.alpha_c
        if not 0.0 <= low <= high < 1.0:
            raise ConfigError(f"{self.name}.alpha_c range must satisfy 0 <= low <= high < 1")
        if len(self.regions) != 3 or min(self.regions) <= 0:
            raise ConfigError(f"{self.name}.regions needs three positive concentrations")
        return self

    def sample(self, rng, t_p):
        anticipation = {
            "a_minus": self.a_minus.sample(rng),
            "b_minus": self.b_minus.sample(rng),
            "tau_minus": self.tau_minus.sample(rng),
        }
        response = {}
        for plus, minus in (("a_plus", "a_minus"), ("b_plus", "b_minus"), ("tau_plus", "tau_minus")):
            dist = getattr(self, plus)
            if isinstance(dist, Link):
                response[plus] = dist.sample(rng, anticipation[minus])
            else:
                response[plus] = dist.sample(rng)
        weights = rng.dirichlet(self.regions)
        _, t_c = combine_circadian(weights)
        alpha_c = float(rng.uniform(*self.alpha_c))
        return PeakParams(alpha_c=alpha_c, t_c=t_c, t_p=t_p, **anticipation, **response)


@dataclass(frozen=True)
class SyntheticCorpus:
    events: Tuple[EventRecord, ...] = ()
    series: Tuple[TimeSeries, ...] = ()
    params: Tuple[PeakParams, ...] = ()

    def __len__(self):
        return len(self.events)

    def windows(self):
        return [
            EventWindow(event=event, series=series, peak=locate_peak(series, event.event_date))
            for event, series in zip(self.events, self.series)
        ]

    def truth(self):
        return {event.key: params for event, params in zip(self.events, self.params)}


def _category(name, tau_minus, tau_plus, a_minus, a_plus, b_minus, b_plus, alpha_c, regions):
    return CategorySpec(
        name=name,
        a_minus=LogNormal(a_minus, 0.6),
        b_minus=LogNormal(b_minus, 0.5),
        tau_minus=LogNormal(tau_minus, 0.35),
        a_plus=Link.through(a_minus, a_plus, 0.8, 0.25),
        b_plus=Link.through(b_minus, b_plus, 0.9, 0.12),
        tau_plus=Link.through(tau_minus, tau_plus, 0.3, 0.12),
        alpha_c=alpha_c,
        regions=regions,
    )


def default_corpus_spec():
    """Five categories shaped after typical fitted medians for each event type."""
    return (
        _category("election", 6.2, 19.0, 900.0, 2500.0, 60.0, 90.0, (0.3, 0.6), (6.0, 2.0, 1.0)),
        _category("sports", 7.0, 14.0, 700.0, 1600.0, 50.0, 60.0, (0.3, 0.6), (3.0, 3.0, 1.0)),
        _category("football", 1.5, 6.7, 1500.0, 2500.0, 80.0, 100.0, (0.4, 0.7), (0.5, 20.0, 0.5)),
        _category("film", 34.0, 87.0, 1200.0, 1800.0, 150.0, 300.0, (0.4, 0.7), (20.0, 2.0, 1.0)),
        _category("holiday", 11.0, 12.0, 1500.0, 1200.0, 120.0, 110.0, (0.5, 0.8), (2.0, 2.0, 2.0)),
    )


def simulate_counts(params, rng, n_hours=WINDOW_HOURS, spike=PEAK_SPIKE):
    """Poisson counts around the model, with a spike at the peak hour."""
    mean = model_curve(params, n_hours)
    t_p = params.t_p
    neighbours = [mean[i] for i in (t_p - 1, t_p + 1) if 0 <= i < n_hours]
    crest = max(
        (params.a_minus + params.b_minus),
        (params.a_plus + params.b_plus),
    ) * (1.0 + params.alpha_c)
    mean[t_p] = spike * max(crest, *neighbours)
    return rng.poisson(mean).astype(np.int64)


def _event_date(index):
    return BASE_DATE + timedelta(days=index)


def _peak_hour(rng):
    return DAYS_BEFORE * 24 + int(rng.integers(0, PEAK_SEARCH_HOURS))


def generate_synthetic_corpus(categories, n_events, seed, spike=PEAK_SPIKE):
    """Draw ``n_events`` events cycling through ``categories``.

    Returns a SyntheticCorpus carrying the generating PeakParams per event.
    """
    categories = tuple(categories)
    if n_events < 0:
        raise ConfigError("n_events must be >= 0")
    if n_events and not categories:
        raise ConfigError("a corpus needs at least one category")
    for category in categories:
        if not isinstance(category, CategorySpec):
            raise ConfigError(f"corpus categories must be CategorySpec, got {type(category).__name__}")
        category.validate()

    events, series, params = [], [], []
    for index in range(n_events):
        category = categories[index % len(categories)]
        rng = derive_rng(seed, "corpus", index)
        event_date = _event_date(index)
        truth = category.sample(rng, _peak_hour(rng))
        counts = simulate_counts(truth, rng, spike=spike)
        event = EventRecord(
            article=f"Synthetic_{category.name}_{index:05d}",
            category=category.name,
            event_date=event_date,
        )
        events.append(event)
        series.append(TimeSeries(start=event.window_start, counts=counts))
        params.append(truth)
    return SyntheticCorpus(events=tuple(events), series=tuple(series), params=tuple(params))


# Share of teams with a short (< 2 h) response time constant, per result.
DISAPPOINTED_RATE = {"win": 0.31, "draw": 0.40, "lose": 0.55}
RESULT_AMPLITUDE = {"win": 700.0, "draw": 380.0, "lose": 1400.0}
STAGE_WEIGHTS = (("group", 0.80), ("knockout", 0.18), ("final", 0.02))
STAGE_SCALE = {"group": 1.0, "knockout": 2.5, "final": 10.0}
DRAW_PROBABILITY = 0.42
OPPOSITE = {"win": "lose", "lose": "win", "draw": "draw"}


def _team_params(rng, result, stage, t_p):
    scale = STAGE_SCALE[stage]
    if rng.uniform() < DISAPPOINTED_RATE[result]:
        tau_plus = float(math.exp(rng.uniform(math.log(0.5), math.log(1.9))))
    else:
        tau_plus = float(math.exp(rng.uniform(math.log(2.5), math.log(20.0))))
    weights = rng.dirichlet((0.5, 20.0, 0.5))
    _, t_c = combine_circadian(weights)
    return PeakParams(
        a_minus=scale * 900.0 * math.exp(0.6 * rng.standard_normal()),
        b_minus=scale * 80.0 * math.exp(0.25 * rng.standard_normal()),
        tau_minus=1.5 * math.exp(0.35 * rng.standard_normal()),
        a_plus=scale * RESULT_AMPLITUDE[result] * math.exp(0.45 * rng.standard_normal()),
        b_plus=scale * 95.0 * math.exp(0.25 * rng.standard_normal()),
        tau_plus=tau_plus,
        alpha_c=float(rng.uniform(0.4, 0.7)),
        t_c=t_c,
        t_p=t_p,
    )


def generate_match_corpus(n_matches, seed, spike=PEAK_SPIKE):
    """Paired football teams with results, stages and opponent links.

    Both teams of a match share the event date and stage; results mirror each
    other. Losing teams show the short "disappointed" response more often than
    winners.
    """
    if n_matches < 0:
        raise ConfigError("n_matches must be >= 0")
    stage_names = [name for name, _ in STAGE_WEIGHTS]
    stage_probs = np.array([weight for _, weight in STAGE_WEIGHTS])
    events, series, params = [], [], []
    for match in range(n_matches):
        rng = derive_rng(seed, "match", match)
        stage = stage_names[int(rng.choice(len(stage_names), p=stage_probs))]
        home_result = "draw" if rng.uniform() < DRAW_PROBABILITY else ("win" if rng.uniform() < 0.5 else "lose")
        event_date = _event_date(match)
        home = f"Synthetic_club_{match:05d}_home"
        away = f"Synthetic_club_{match:05d}_away"
        for team, opponent, result in ((home, away, home_result), (away, home, OPPOSITE[home_result])):
            truth = _team_params(rng, result, stage, _peak_hour(rng))
            event = EventRecord(
                article=team,
                category="football",
                event_date=event_date,
                outcome=Outcome(result=result, stage=stage, opponent=opponent),
            )
            events.append(event)
            series.append(TimeSeries(start=event.window_start, counts=simulate_counts(truth, rng, spike=spike)))
            params.append(truth)
    return SyntheticCorpus(events=tuple(events), series=tuple(series), params=tuple(params))


def planted_mix_circadian(weights, template=None):
    """(alpha_c, t_c) of an exact regional mix, for decomposition checks."""
    if template is None:
        return combine_circadian(weights)
    return combine_circadian(weights, template.t_ref, template.alpha_bar)

