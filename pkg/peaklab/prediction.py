"""Category-informed priors, MAP response fits, forecasts and APE metrics.

Forecasts start from a pre-peak fit (circadian pair plus anticipation triple)
and a few hours of post-peak data. The response triple is chosen by maximizing
a Gaussian likelihood on the observed hours plus log-normal priors whose means
are linear in the matching anticipation parameter.
"""
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import optimize
from scipy.stats import norm
from sklearn.model_selection import KFold

from peaklab import baselines
from peaklab.errors import NumericalError, ParameterError
from peaklab.fitting import AMPLITUDE_FLOOR, TAU_BOUNDS, fit_peak, fit_prepeak, multistart_minimize
from peaklab.model_core import PeakParams, circadian, eval_model
from peaklab.parallel import run_parallel
from peaklab.seeding import derive_seed

logger = logging.getLogger(__name__)

HORIZON_HOURS = 168
MIN_CATEGORY_FITS = 8
VARIANCE_FLOOR = 1e-6
POOLED = "all"
RESPONSE_PAIRS = (("a_plus", "a_minus"), ("b_plus", "b_minus"), ("tau_plus", "tau_minus"))
MAP_OPTIONS = {"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000}


@dataclass(frozen=True)
class PriorRow:
    slope: float
    intercept: float
    variance: float
    n: int
    singular: bool = False


@dataclass(frozen=True)
class PriorTable:
    """Rows keyed by (category, response parameter); category ``all`` is pooled."""

    rows: Dict[Tuple[str, str], PriorRow]
    regressor: str = "log"
    category_free: bool = False

    def row(self, category, name):
        if not self.category_free and (category, name) in self.rows:
            return self.rows[(category, name)]
        if (POOLED, name) not in self.rows:
            raise ParameterError(f"prior table has no pooled row for {name}")
        return self.rows[(POOLED, name)]

    def mean(self, category, name, anticipation_value):
        """Log-space prior mean for ``name`` given the matching anticipation value."""
        row = self.row(category, name)
        x = math.log(max(anticipation_value, AMPLITUDE_FLOOR)) if self.regressor == "log" else anticipation_value
        return row.slope * x + row.intercept

    def mode(self, category, prepeak):
        """Log-normal modes exp(mu - sigma^2) of the response triple."""
        values = []
        for plus, minus in RESPONSE_PAIRS:
            mu = self.mean(category, plus, getattr(prepeak, minus))
            values.append(math.exp(mu - self.row(category, plus).variance))
        return tuple(values)

    def categories(self):
        return sorted({category for category, _ in self.rows})

    def to_rows(self):
        return [
            dict(category=category, parameter=name, slope=row.slope, intercept=row.intercept,
                 variance=row.variance, n=row.n, singular=row.singular)
            for (category, name), row in sorted(self.rows.items())
        ]


def _ols_row(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n == 0:
        return None
    if n < 2 or np.ptp(x) == 0.0:
        residual = y - y.mean()
        return PriorRow(0.0, float(y.mean()), max(float(np.mean(residual ** 2)), VARIANCE_FLOOR), n, True)
    design = np.column_stack([x, np.ones(n)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ np.array([slope, intercept])
    dof = n - 2 if n > 2 else n
    variance = max(float(residual @ residual) / dof, VARIANCE_FLOOR)
    return PriorRow(float(slope), float(intercept), variance, n)


def learn_priors(training_fits, categories, regressor="log", category_free=False, min_fits=MIN_CATEGORY_FITS):
    """Regress log q+ on q- (log or raw) per category and pooled.

    ``training_fits`` and ``categories`` are parallel sequences; fits that did
    not converge are skipped. Categories with fewer than ``min_fits`` usable
    fits get no row of their own and fall back to the pooled one.
    """
    if regressor not in ("log", "raw"):
        raise ParameterError(f"unknown regressor scale {regressor!r}")
    groups = defaultdict(list)
    for fit, category in zip(training_fits, categories):
        if fit.converged:
            groups[category].append(fit.params)
            groups[POOLED].append(fit.params)
    if not groups[POOLED]:
        raise ParameterError("learn_priors needs at least one converged fit")

    rows = {}
    for category, params in groups.items():
        if category != POOLED and len(params) < min_fits:
            logger.info("prior_fallback category=%s fits=%d", category, len(params))
            continue
        for plus, minus in RESPONSE_PAIRS:
            x = [getattr(p, minus) for p in params]
            if regressor == "log":
                x = np.log(np.maximum(x, AMPLITUDE_FLOOR))
            y = np.log(np.maximum([getattr(p, plus) for p in params], AMPLITUDE_FLOOR))
            row = _ols_row(x, y)
            if row.singular:
                logger.warning("prior_singular category=%s parameter=%s", category, plus)
            rows[(category, plus)] = row
    return PriorTable(rows=rows, regressor=regressor, category_free=category_free)


@dataclass(frozen=True, eq=False)
class ForecastRequest:
    """Observed hours up to ``t_p + t_obs`` plus the pre-peak fit."""

    observed: np.ndarray
    t_p: int
    t_obs: int
    prepeak: object
    category: str = POOLED
    horizon: int = HORIZON_HOURS

    def __post_init__(self):
        if not 0 <= self.t_obs < self.horizon:
            raise ParameterError(f"t_obs {self.t_obs} must lie in [0, {self.horizon})")

    @classmethod
    def from_series(cls, series, t_p, t_obs, prepeak, category=POOLED, horizon=HORIZON_HOURS):
        values = np.asarray(getattr(series, "values", series), dtype=float)
        return cls(values[: t_p + t_obs + 1].copy(), int(t_p), int(t_obs), prepeak, category, horizon)

    @property
    def observation_hours(self):
        hours = np.arange(self.t_p + 1, self.t_p + self.t_obs + 1, dtype=float)
        return hours[hours < self.observed.size]

    @property
    def prediction_hours(self):
        return np.arange(self.t_p + self.t_obs + 1, self.t_p + self.horizon + 1, dtype=float)

    @property
    def likelihood_variance(self):
        """Per-hour noise variance on the observed post-peak hours.

        The pre-peak variance-to-mean ratio is carried over to the mean observed
        post-peak count, so the likelihood widens with the response volume.
        """
        p = self.prepeak
        dispersion = p.noise_variance / max(getattr(p, "level", 1.0), 1.0)
        hours = self.observation_hours
        volume = float(self.observed[hours.astype(int)].mean()) if hours.size else 1.0
        return max(dispersion * max(volume, 1.0), VARIANCE_FLOOR)

    def params(self, a_plus, b_plus, tau_plus):
        p = self.prepeak
        return PeakParams(
            a_minus=p.a_minus, b_minus=p.b_minus, tau_minus=p.tau_minus,
            a_plus=a_plus, b_plus=b_plus, tau_plus=tau_plus,
            alpha_c=p.alpha_c, t_c=p.t_c, t_p=self.t_p,
        )


@dataclass(frozen=True)
class ResponseFit:
    a_plus: float
    b_plus: float
    tau_plus: float
    log_posterior: float
    no_data: bool = False
    start: str = ""

    @property
    def triple(self):
        return (self.a_plus, self.b_plus, self.tau_plus)


def _response_curve(req, hours, log_triple):
    a_plus, b_plus, tau_plus = np.exp(np.clip(log_triple, -50.0, 50.0))
    decay = np.exp(-(hours - req.t_p) / tau_plus)
    return circadian(req.prepeak.alpha_c, req.prepeak.t_c, hours) * (a_plus * decay + b_plus)


def log_posterior(req, priors, log_triple):
    """Gaussian log-likelihood of the observed hours plus log-normal log-priors.

    Constants that do not depend on the response triple are dropped from the
    likelihood. With ``priors=None`` the prior term is zero.
    """
    log_triple = np.asarray(log_triple, dtype=float)
    hours = req.observation_hours
    value = 0.0
    if hours.size:
        residual = req.observed[hours.astype(int)] - _response_curve(req, hours, log_triple)
        value -= float(residual @ residual) / (2.0 * req.likelihood_variance)
    if priors is not None:
        for (plus, minus), x in zip(RESPONSE_PAIRS, log_triple):
            mu = priors.mean(req.category, plus, getattr(req.prepeak, minus))
            sd = math.sqrt(priors.row(req.category, plus).variance)
            # density of q, not of log q
            value += float(norm.logpdf(x, loc=mu, scale=sd)) - x
    return value


def least_squares_response(req):
    """Plain least-squares response triple on the observed hours.

    Scans the time constant on a log grid, solves amplitude and baseline by
    nonnegative least squares, and refines the best grid cell.
    """
    hours = req.observation_hours
    if hours.size == 0:
        raise ParameterError("no observed hours after the peak")
    observed = req.observed[hours.astype(int)]
    wave = circadian(req.prepeak.alpha_c, req.prepeak.t_c, hours)

    def solve(log_tau):
        decay = np.exp(-(hours - req.t_p) / math.exp(log_tau))
        design = np.column_stack([wave * decay, wave])
        coeffs, residual = optimize.nnls(design, observed)
        return residual * residual, coeffs

    grid = np.linspace(math.log(TAU_BOUNDS[0]), math.log(TAU_BOUNDS[1]), 120)
    scores = [solve(x)[0] for x in grid]
    index = int(np.argmin(scores))
    lo, hi = grid[max(index - 1, 0)], grid[min(index + 1, grid.size - 1)]
    result = optimize.minimize_scalar(lambda x: solve(x)[0], bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-10})
    log_tau = float(result.x) if result.fun <= scores[index] else float(grid[index])
    _, (a_plus, b_plus) = solve(log_tau)
    return (max(float(a_plus), AMPLITUDE_FLOOR), max(float(b_plus), AMPLITUDE_FLOOR), math.exp(log_tau))


def map_fit_response(req, priors):
    """MAP response triple; ``priors=None`` is the uniform prior (least squares).

    The search starts from the prior mode, the least-squares solution and the
    mirrored anticipation triple, and keeps the best posterior.
    """
    hours = req.observation_hours
    if hours.size == 0:
        if priors is None:
            triple = req.prepeak.anticipation
            return ResponseFit(*triple, log_posterior=float("nan"), no_data=True, start="mirror")
        triple = priors.mode(req.category, req.prepeak)
        value = log_posterior(req, priors, np.log(triple))
        return ResponseFit(*triple, log_posterior=value, no_data=True, start="prior")

    ls_triple = least_squares_response(req)
    if priors is None:
        return ResponseFit(*ls_triple, log_posterior=log_posterior(req, None, np.log(ls_triple)), start="least_squares")

    candidates = {
        "prior": np.log(priors.mode(req.category, req.prepeak)),
        "least_squares": np.log(ls_triple),
        "mirror": np.log(np.maximum(req.prepeak.anticipation, AMPLITUDE_FLOOR)),
    }
    objective = lambda x: -log_posterior(req, priors, x)  # noqa: E731
    best_name, best_x, best_value = None, None, math.inf
    for name, start in candidates.items():
        value = objective(start)
        if value < best_value:
            best_name, best_x, best_value = name, start, value
    x, value, _ = multistart_minimize(objective, list(candidates.values()), MAP_OPTIONS)
    if value < best_value:
        best_x, best_value = x, value
    a_plus, b_plus, tau_plus = (float(v) for v in np.exp(best_x))
    tau_plus = float(np.clip(tau_plus, *TAU_BOUNDS))
    value = log_posterior(req, priors, np.log([a_plus, b_plus, tau_plus]))
    return ResponseFit(a_plus, b_plus, tau_plus, log_posterior=value, start=best_name)


def forecast(req, params):
    """Model values on the prediction hours (t_p + t_obs, t_p + horizon]."""
    return eval_model(params, req.prediction_hours)


def ape_timeseries(actual, predicted):
    """sum |s - s_hat| / sum s over the prediction span; NaN when nothing was viewed."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    total = float(actual.sum())
    if total == 0.0:
        return float("nan")
    return float(np.abs(actual - predicted).sum()) / total


def ape_cumulative(actual, predicted):
    """|N - N_hat| / N on the prediction span totals."""
    total = float(np.asarray(actual, dtype=float).sum())
    if total == 0.0:
        return float("nan")
    return abs(total - float(np.asarray(predicted, dtype=float).sum())) / total


@dataclass(frozen=True)
class MetricRow:
    event: str
    category: str
    t_obs: int
    method: str
    prior: str
    ape_ts: float
    ape_cum: float
    error: str = ""
    predicted: Tuple[float, ...] = field(default=(), repr=False, compare=False)

    @property
    def defined(self):
        return not (math.isnan(self.ape_ts) or math.isnan(self.ape_cum))


@dataclass
class EvaluationPlan:
    methods: Tuple[str, ...] = ("proposed",)
    prior: str = "anticipation-category"
    t_obs: Tuple[int, ...] = (24,)
    horizon: int = HORIZON_HOURS
    regressor: str = "log"
    folds: int = 5
    seed: int = 0
    workers: int = 1
    fail_fast: bool = False
    fits: Optional[dict] = None
    spikem_options: Optional[dict] = None


def fold_assignment(n_events, folds, seed):
    """Fold index per event, from a seeded shuffle."""
    if n_events < 2:
        raise ParameterError("fold-based evaluation needs at least two events")
    splitter = KFold(n_splits=min(folds, n_events), shuffle=True, random_state=derive_seed(seed, "predict", "folds"))
    assignment = np.zeros(n_events, dtype=int)
    for fold, (_, test) in enumerate(splitter.split(np.zeros(n_events))):
        assignment[test] = fold
    return assignment


def _priors_for(plan, fits, categories):
    if plan.prior == "none":
        return None
    return learn_priors(
        fits, categories, regressor=plan.regressor, category_free=plan.prior == "anticipation"
    )


def _proposed_prediction(window, prepeak, priors, t_obs, horizon):
    req = ForecastRequest.from_series(window.series, window.peak.t_p, t_obs, prepeak, window.event.category, horizon)
    response = map_fit_response(req, priors)
    return forecast(req, req.params(*response.triple))


def _baseline_prediction(method, window, t_obs, horizon, lr_table, spikem_options=None):
    t_p = window.peak.t_p
    last = t_p + t_obs
    if method == "powerlaw":
        params = baselines.powerlaw_fit(window.series, t_p, last_hour=last)
        return baselines.powerlaw_predict(params, np.arange(t_obs + 1, horizon + 1))
    if method == "spikem":
        fit = baselines.spikem_fit(window.series, t_p, last_hour=last, options=spikem_options)
        return baselines.spikem_simulate(fit.params, t_p + horizon + 1)[last + 1 :]
    if method == "lr":
        observed = np.asarray(window.series.values)
        r_obs = float(observed[t_p + 1 : last + 1].sum())
        return baselines.lr_forecast_hourly(lr_table, r_obs)
    raise ParameterError(f"unknown method {method!r}")


def _event_rows(window, plan, prepeak, priors, lr_tables):
    rows = []
    observed = np.asarray(window.series.values)
    t_p = window.peak.t_p
    for t_obs in plan.t_obs:
        actual = observed[t_p + t_obs + 1 : t_p + plan.horizon + 1]
        for method in plan.methods:
            error = ""
            predicted = ()
            try:
                if method == "proposed":
                    if prepeak is None:
                        raise NumericalError("pre-peak fit unavailable")
                    predicted = _proposed_prediction(window, prepeak, priors, t_obs, plan.horizon)
                else:
                    predicted = _baseline_prediction(
                        method, window, t_obs, plan.horizon, lr_tables.get(t_obs), plan.spikem_options
                    )
                ape_ts, ape_cum = ape_timeseries(actual, predicted), ape_cumulative(actual, predicted)
            except (NumericalError, ParameterError) as exc:
                if plan.fail_fast:
                    raise
                logger.warning("forecast_failed event=%s method=%s t_obs=%d error=%s", window.event.key, method, t_obs, exc)
                ape_ts = ape_cum = float("nan")
                error = str(exc)
            rows.append(MetricRow(window.event.key, window.event.category, t_obs, method,
                                  plan.prior if method == "proposed" else "-", ape_ts, ape_cum, error,
                                  tuple(float(v) for v in predicted)))
    return rows


def evaluate_forecasts(windows, plan):
    """Fold-based forecast evaluation over a corpus of event windows.

    Priors and LR tables are learned from the training folds only. ``plan.fits``
    maps event keys to full-window PeakFits; missing fits are computed.
    """
    windows = list(windows)
    assignment = fold_assignment(len(windows), plan.folds, plan.seed)
    fits = dict(plan.fits or {})
    todo = [w for w in windows if w.event.key not in fits]
    if "proposed" in plan.methods and plan.prior != "none" and todo:

        def _full(window):
            try:
                return fit_peak(window.series, window.peak)
            except ParameterError as exc:
                if plan.fail_fast:
                    raise
                logger.warning("fit_failed event=%s error=%s", window.event.key, exc)
                return None

        for window, fit in zip(todo, run_parallel(_full, todo, plan.workers, "fit")):
            if fit is not None:
                fits[window.event.key] = fit

    def _prepeak(window):
        try:
            return fit_prepeak(window.series, window.peak)
        except ParameterError as exc:
            if plan.fail_fast:
                raise
            logger.warning("prepeak_failed event=%s error=%s", window.event.key, exc)
            return None

    prepeaks = run_parallel(_prepeak, windows, plan.workers, "prepeak") if "proposed" in plan.methods else [None] * len(windows)

    rows_by_index = {}
    for fold in sorted(set(assignment.tolist())):
        train = [w for w, f in zip(windows, assignment) if f != fold]
        test = [i for i, f in enumerate(assignment) if f == fold]
        priors = None
        if "proposed" in plan.methods and plan.prior != "none":
            usable = [w for w in train if w.event.key in fits]
            priors = _priors_for(plan, [fits[w.event.key] for w in usable], [w.event.category for w in usable])
        lr_tables = {}
        if "lr" in plan.methods:
            cumulatives = [baselines.post_peak_cumulative(w.series, w.peak.t_p, plan.horizon) for w in train]
            lr_tables = {t_obs: baselines.lr_train(cumulatives, t_obs, plan.horizon) for t_obs in plan.t_obs}
        results = run_parallel(
            lambda i: _event_rows(windows[i], plan, prepeaks[i], priors, lr_tables),
            test, plan.workers, f"forecast[fold={fold}]",
        )
        rows_by_index.update(zip(test, results))
    return [row for index in range(len(windows)) for row in rows_by_index[index]]


def summarize_metrics(rows):
    """Mean and median APE per (method, prior, t_obs), with excluded counts."""
    groups = defaultdict(list)
    for row in rows:
        groups[(row.method, row.prior, row.t_obs)].append(row)
    summary = []
    for (method, prior, t_obs), members in sorted(groups.items()):
        defined = [row for row in members if row.defined]
        ts = np.array([row.ape_ts for row in defined])
        cum = np.array([row.ape_cum for row in defined])
        summary.append(dict(
            method=method, prior=prior, t_obs=t_obs, n=len(defined), excluded=len(members) - len(defined),
            mean_ape_ts=float(ts.mean()) if ts.size else float("nan"),
            median_ape_ts=float(np.median(ts)) if ts.size else float("nan"),
            mean_ape_cum=float(cum.mean()) if cum.size else float("nan"),
            median_ape_cum=float(np.median(cum)) if cum.size else float("nan"),
        ))
    return summary
