"""Corpus-level parameter tables: per category, per match stage and per result."""
import logging
from collections import defaultdict

import numpy as np

from peaklab.errors import UndefinedRatioError
from peaklab.ingestion import CATEGORIES, RESULTS, STAGES
from peaklab.model_core import anticipation_response_ratio, decompose_circadian

logger = logging.getLogger(__name__)

DISAPPOINTED_HOURS = 2.0


def quartile_summary(values):
    """Median and interquartile range; NaN entries are dropped."""
    values = np.asarray([v for v in values if np.isfinite(v)], dtype=float)
    if values.size == 0:
        return dict(n=0, median=float("nan"), q25=float("nan"), q75=float("nan"))
    q25, median, q75 = np.percentile(values, [25, 50, 75])
    return dict(n=int(values.size), median=float(median), q25=float(q25), q75=float(q75))


def _ordered(groups, preferred):
    return [name for name in preferred if name in groups] + sorted(set(groups) - set(preferred))


def _paired(fits, events):
    for fit, event in zip(fits, events):
        if fit is not None and fit.converged:
            yield fit.params, event


def _rho(params):
    try:
        return anticipation_response_ratio(params)
    except UndefinedRatioError:
        return float("nan")


def category_parameter_table(fits, events):
    """Per category: quartiles of tau-, tau+ and rho."""
    groups = defaultdict(list)
    for params, event in _paired(fits, events):
        groups[event.category].append(params)
    rows = []
    for category in _ordered(groups, CATEGORIES):
        members = groups[category]
        row = dict(category=category, events=len(members))
        for name, values in (
            ("tau_minus", [p.tau_minus for p in members]),
            ("tau_plus", [p.tau_plus for p in members]),
            ("rho", [_rho(p) for p in members]),
        ):
            stats = quartile_summary(values)
            row.update({f"{name}_median": stats["median"], f"{name}_q25": stats["q25"], f"{name}_q75": stats["q75"]})
        rows.append(row)
    return rows


def _outcome_table(fits, events, attribute, order, names):
    groups = defaultdict(list)
    for params, event in _paired(fits, events):
        value = getattr(event.outcome, attribute, None) if event.outcome else None
        if value:
            groups[value].append(params)
    rows = []
    for key in _ordered(groups, order):
        members = groups[key]
        row = {attribute: key, "events": len(members)}
        for name in names:
            stats = quartile_summary([getattr(p, name) for p in members])
            row.update({f"{name}_median": stats["median"], f"{name}_q25": stats["q25"], f"{name}_q75": stats["q75"]})
        rows.append(row)
    return rows


def stage_parameter_table(fits, events):
    """Per football stage: quartiles of a- and a+."""
    return _outcome_table(fits, events, "stage", STAGES, ("a_minus", "a_plus"))


def result_parameter_table(fits, events):
    """Per match result: quartiles of a+ and tau+."""
    return _outcome_table(fits, events, "result", RESULTS, ("a_plus", "tau_plus"))


def response_class(fit, threshold_hours=DISAPPOINTED_HOURS):
    params = getattr(fit, "params", fit)
    return "disappointed" if params.tau_plus < threshold_hours else "excited"


def disappointed_loser_rates(fits, events, threshold_hours=DISAPPOINTED_HOURS):
    """Share of disappointed responses per match result."""
    counts = defaultdict(lambda: [0, 0])
    for params, event in _paired(fits, events):
        if not (event.outcome and event.outcome.result):
            continue
        tally = counts[event.outcome.result]
        tally[1] += 1
        if response_class(params, threshold_hours) == "disappointed":
            tally[0] += 1
    return {
        result: dict(disappointed=hit, total=total, rate=hit / total if total else float("nan"))
        for result, (hit, total) in ((r, counts[r]) for r in _ordered(counts, RESULTS))
    }


def view_totals(series, peak):
    """(views before the peak hour, views after it)."""
    counts = np.asarray(getattr(series, "counts", series))
    t_p = int(getattr(peak, "t_p", peak))
    return int(counts[:t_p].sum()), int(counts[t_p + 1 :].sum())


def region_shares(fits, events):
    """Per category, the fraction of events whose largest regional weight is each region."""
    groups = defaultdict(lambda: defaultdict(int))
    for params, event in _paired(fits, events):
        groups[event.category][decompose_circadian(params.alpha_c, params.t_c).dominant()] += 1
    shares = {}
    for category in _ordered(groups, CATEGORIES):
        tally = groups[category]
        total = sum(tally.values())
        shares[category] = {region: tally.get(region, 0) / total for region in ("us", "uk", "au")}
    return shares


def corpus_report(fits, events, windows=None):
    """Everything the ``report`` command writes to report.json."""
    fits, events = list(fits), list(events)
    r2 = [fit.r2 for fit in fits if fit is not None and fit.converged]
    report = dict(
        events=len(events),
        converged=sum(1 for fit in fits if fit is not None and fit.converged),
        r2=quartile_summary(r2),
        categories=category_parameter_table(fits, events),
        stages=stage_parameter_table(fits, events),
        results=result_parameter_table(fits, events),
        disappointed=disappointed_loser_rates(fits, events),
        regions=region_shares(fits, events),
    )
    if windows is not None:
        totals = defaultdict(list)
        for window, fit in zip(windows, fits):
            if fit is None or not fit.converged or not window.event.outcome:
                continue
            before, after = view_totals(window.series, window.peak)
            totals[response_class(fit)].append((before, after))
        report["view_totals"] = {
            name: dict(
                before=quartile_summary([b for b, _ in pairs]),
                after=quartile_summary([a for _, a in pairs]),
            )
            for name, pairs in sorted(totals.items())
        }
    return report
