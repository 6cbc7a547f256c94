"""Least-squares fitting of the peak model and the R^2 score.

The search runs in a transformed space: log for amplitudes, baselines and time
constants, a scaled logit for the circadian amplitude, and raw hours for the
circadian phase (wrapped at the end). Given the circadian pair and the two time
constants, the amplitudes and baselines enter linearly, so a first stage searches
only those four nonlinear coordinates and solves the rest by nonnegative least
squares. A second stage polishes all eight coordinates from the best start.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from peaklab.errors import ParameterError
from peaklab.model_core import OMEGA, PERIOD_HOURS, PeakParams, circadian, model_curve

logger = logging.getLogger(__name__)

N_PARAMS = 8
ALPHA_MAX = 0.999
AMPLITUDE_FLOOR = 1e-6
NOISE_FLOOR = 1.0
MIN_SERIES_HOURS = 48
MIN_PREPEAK_HOURS = 48
TAU_BOUNDS = (0.05, 5000.0)

# Relative objective change and iteration cap per start.
NM_OPTIONS = {"xatol": 1e-8, "fatol": 1e-9, "maxiter": 2000, "adaptive": True}
TAU_SCALES = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class PeakFit:
    params: PeakParams
    r2: float
    residual_variance: float
    converged: bool
    n_points: int
    rss: float = float("nan")

    def to_dict(self):
        data = {"params": self.params.to_dict()}
        data.update(
            r2=None if math.isnan(self.r2) else self.r2,
            residual_variance=self.residual_variance,
            converged=self.converged,
            n_points=self.n_points,
            rss=self.rss,
        )
        return data

    @classmethod
    def from_dict(cls, data):
        r2 = data.get("r2")
        return cls(
            params=PeakParams.from_dict(data["params"]),
            r2=float("nan") if r2 is None else float(r2),
            residual_variance=float(data["residual_variance"]),
            converged=bool(data["converged"]),
            n_points=int(data["n_points"]),
            rss=float("nan") if data.get("rss") is None else float(data["rss"]),
        )


@dataclass(frozen=True)
class PrepeakFit:
    alpha_c: float
    t_c: float
    a_minus: float
    b_minus: float
    tau_minus: float
    noise_variance: float
    converged: bool
    tau_identifiable: bool
    n_points: int
    level: float = 1.0

    @property
    def anticipation(self):
        return (self.a_minus, self.b_minus, self.tau_minus)


def r_squared(series, model_values, t_p=None):
    """1 - RSS/TSS over every hour except ``t_p``; NaN when the data has no variance."""
    observed = np.asarray(series, dtype=float)
    fitted = np.asarray(model_values, dtype=float)
    mask = np.ones(observed.size, dtype=bool)
    if t_p is not None:
        mask[t_p] = False
    observed, fitted = observed[mask], fitted[mask]
    total = float(np.sum((observed - observed.mean()) ** 2))
    if total == 0.0:
        return float("nan")
    return 1.0 - float(np.sum((observed - fitted) ** 2)) / total


def multistart_minimize(objective, starts, options=None):
    """Nelder-Mead from each start; returns (best_x, best_value, any_converged)."""
    options = dict(NM_OPTIONS, **(options or {}))
    best_x, best_value, any_converged = None, math.inf, False
    for start in starts:
        result = optimize.minimize(objective, np.asarray(start, dtype=float), method="Nelder-Mead", options=options)
        value = float(result.fun)
        any_converged = any_converged or bool(result.success)
        if math.isfinite(value) and value < best_value:
            best_x, best_value = np.asarray(result.x, dtype=float), value
    if best_x is None:
        best_x = np.asarray(starts[0], dtype=float)
    return best_x, best_value, any_converged


def _alpha_from(z):
    return ALPHA_MAX * float(expit(z))


def _alpha_to(alpha):
    return float(logit(np.clip(alpha / ALPHA_MAX, 1e-6, 1.0 - 1e-9)))


def _log_floor(value):
    return math.log(max(value, AMPLITUDE_FLOOR))


def _nnls_branch(wave, decay, observed):
    """Nonnegative (amplitude, baseline) for C(t) * (a * decay + b)."""
    design = np.column_stack([wave * decay, wave])
    coeffs, residual = optimize.nnls(design, observed)
    return coeffs[0], coeffs[1], residual * residual


def _safe_exp(x):
    return np.exp(np.clip(x, -700.0, 700.0))


class _Branches:
    """Hours and observations on each side of the peak."""

    def __init__(self, observed, t_p):
        hours = np.arange(observed.size, dtype=float)
        self.t_p = t_p
        self.pre_t = hours[hours < t_p]
        self.pre_s = observed[hours < t_p]
        self.post_t = hours[hours > t_p]
        self.post_s = observed[hours > t_p]
        both = np.concatenate([self.pre_s, self.post_s])
        self.tss = max(float(np.sum((both - both.mean()) ** 2)), 1e-12)

    @property
    def n_points(self):
        return self.pre_t.size + self.post_t.size


def _circadian_guess(observed, t_p):
    """Amplitude and phase of the 24-hour Fourier component away from the peak."""
    hours = np.arange(observed.size, dtype=float)
    mask = np.abs(hours - t_p) > 24
    if mask.sum() < 24:
        mask = hours != t_p
    values = observed[mask]
    mean = values.mean()
    if mean <= 0:
        return 0.1, 12.0
    component = np.sum(values * np.exp(-1j * OMEGA * hours[mask])) * 2.0 / values.size
    alpha = float(np.clip(abs(component) / mean, 0.05, 0.9))
    t_c = (-math.atan2(component.imag, component.real) / OMEGA) % PERIOD_HOURS
    return alpha, t_c


def _half_decay(excess):
    """Hours until ``excess`` first falls below half its first value, as a time constant."""
    if excess.size == 0 or excess[0] <= 0:
        return 6.0
    below = np.nonzero(excess < excess[0] / 2.0)[0]
    steps = int(below[0]) if below.size else excess.size
    return float(np.clip(max(steps, 1) / math.log(2.0), 0.5, 1000.0))


def initial_guess(observed, t_p):
    """Data heuristics for (b-, a-, tau-, b+, a+, tau+, alpha_c, t_c)."""
    pre, post = observed[:t_p], observed[t_p + 1 :]
    b_minus = float(np.median(pre[:24])) if pre.size else 1.0
    b_plus = float(np.median(post[-24:])) if post.size else 1.0
    a_minus = max(float(pre[-1]) - b_minus, 1.0) if pre.size else 1.0
    a_plus = max(float(post[0]) - b_plus, 1.0) if post.size else 1.0
    tau_minus = _half_decay(pre[::-1] - b_minus)
    tau_plus = _half_decay(post - b_plus)
    alpha_c, t_c = _circadian_guess(observed, t_p)
    return dict(
        a_minus=a_minus,
        b_minus=max(b_minus, AMPLITUDE_FLOOR),
        tau_minus=tau_minus,
        a_plus=a_plus,
        b_plus=max(b_plus, AMPLITUDE_FLOOR),
        tau_plus=tau_plus,
        alpha_c=alpha_c,
        t_c=t_c,
    )


def _projected(branches, theta):
    """Profile out amplitudes and baselines for (z_alpha, t_c, log tau-, log tau+)."""
    alpha = _alpha_from(theta[0])
    t_c = theta[1]
    tau_minus, tau_plus = math.exp(np.clip(theta[2], -20, 20)), math.exp(np.clip(theta[3], -20, 20))
    wave_pre = circadian(alpha, t_c, branches.pre_t)
    wave_post = circadian(alpha, t_c, branches.post_t)
    a_minus, b_minus, rss_pre = _nnls_branch(
        wave_pre, _safe_exp((branches.pre_t - branches.t_p) / tau_minus), branches.pre_s
    )
    a_plus, b_plus, rss_post = _nnls_branch(
        wave_post, _safe_exp(-(branches.post_t - branches.t_p) / tau_plus), branches.post_s
    )
    linear = (a_minus, b_minus, a_plus, b_plus)
    return (rss_pre + rss_post) / branches.tss, linear


def _pack(values):
    return np.array(
        [
            _log_floor(values["a_minus"]),
            _log_floor(values["b_minus"]),
            math.log(values["tau_minus"]),
            _log_floor(values["a_plus"]),
            _log_floor(values["b_plus"]),
            math.log(values["tau_plus"]),
            _alpha_to(values["alpha_c"]),
            values["t_c"],
        ]
    )


def _unpack(u, t_p):
    tau_lo, tau_hi = TAU_BOUNDS
    return PeakParams(
        a_minus=math.exp(min(u[0], 700.0)),
        b_minus=math.exp(min(u[1], 700.0)),
        tau_minus=float(np.clip(math.exp(min(u[2], 700.0)), tau_lo, tau_hi)),
        a_plus=math.exp(min(u[3], 700.0)),
        b_plus=math.exp(min(u[4], 700.0)),
        tau_plus=float(np.clip(math.exp(min(u[5], 700.0)), tau_lo, tau_hi)),
        alpha_c=_alpha_from(u[6]),
        t_c=float(u[7]),
        t_p=t_p,
    )


def _full_objective(branches, u):
    u = np.clip(u, -50.0, 50.0)
    alpha, t_c = _alpha_from(u[6]), u[7]
    a_minus, b_minus, tau_minus, a_plus, b_plus, tau_plus = np.exp(u[:6])
    pre = circadian(alpha, t_c, branches.pre_t) * (
        a_minus * _safe_exp((branches.pre_t - branches.t_p) / tau_minus) + b_minus
    )
    post = circadian(alpha, t_c, branches.post_t) * (
        a_plus * _safe_exp(-(branches.post_t - branches.t_p) / tau_plus) + b_plus
    )
    rss = np.sum((branches.pre_s - pre) ** 2) + np.sum((branches.post_s - post) ** 2)
    return float(rss) / branches.tss


def _nonlinear_starts(guess):
    z_alpha = _alpha_to(guess["alpha_c"])
    return [
        np.array(
            [
                z_alpha,
                guess["t_c"],
                math.log(guess["tau_minus"] * scale_minus),
                math.log(guess["tau_plus"] * scale_plus),
            ]
        )
        for scale_minus in TAU_SCALES
        for scale_plus in TAU_SCALES
    ]


def fit_peak(series, peak, options=None):
    """Fit all eight model parameters, excluding the peak hour.

    ``series`` is a TimeSeries (or a count array) and ``peak`` a PeakLocation
    (or the integer peak hour).
    """
    observed = np.asarray(getattr(series, "values", series), dtype=float)
    t_p = int(getattr(peak, "t_p", peak))
    if observed.size < MIN_SERIES_HOURS:
        raise ParameterError(f"fit_peak needs at least {MIN_SERIES_HOURS} hours, got {observed.size}")
    if not 0 < t_p < observed.size - 1:
        raise ParameterError(f"peak hour {t_p} must have data on both sides")

    branches = _Branches(observed, t_p)
    guess = initial_guess(observed, t_p)

    theta, _, stage_one_ok = multistart_minimize(
        lambda th: _projected(branches, th)[0], _nonlinear_starts(guess), options
    )
    _, (a_minus, b_minus, a_plus, b_plus) = _projected(branches, theta)
    start = _pack(
        dict(
            a_minus=a_minus,
            b_minus=b_minus,
            tau_minus=math.exp(theta[2]),
            a_plus=a_plus,
            b_plus=b_plus,
            tau_plus=math.exp(theta[3]),
            alpha_c=_alpha_from(theta[0]),
            t_c=theta[1],
        )
    )
    u, value, polish_ok = multistart_minimize(lambda x: _full_objective(branches, x), [start], options)
    if _full_objective(branches, start) < value:
        u, value = start, _full_objective(branches, start)

    params = _unpack(u, t_p)
    # score the reported parameters; the time constants may have been clipped
    reported = np.array(u, dtype=float)
    reported[[2, 5]] = np.log([params.tau_minus, params.tau_plus])
    value = _full_objective(branches, reported)
    rss = value * branches.tss
    n_points = branches.n_points
    fit = PeakFit(
        params=params,
        r2=1.0 - value if branches.tss > 1e-12 else float("nan"),
        residual_variance=max(rss / max(n_points - N_PARAMS, 1), 0.0),
        converged=stage_one_ok or polish_ok,
        n_points=n_points,
        rss=rss,
    )
    if not fit.converged:
        logger.warning("fit_not_converged t_p=%d r2=%.4f", t_p, fit.r2)
    return fit


def _prepeak_objective(pre_t, pre_s, t_p, tss, theta):
    alpha = _alpha_from(theta[0])
    tau = math.exp(np.clip(theta[2], -20, 20))
    wave = circadian(alpha, theta[1], pre_t)
    a_minus, b_minus, rss = _nnls_branch(wave, _safe_exp((pre_t - t_p) / tau), pre_s)
    return rss / tss, (a_minus, b_minus)


def fit_prepeak(series, peak, options=None):
    """Fit the circadian pair and anticipation triple on the hours before the peak.

    The noise variance is estimated from the pre-peak residuals and floored at 1;
    ``level`` is the mean pre-peak count.
    """
    observed = np.asarray(getattr(series, "values", series), dtype=float)
    t_p = int(getattr(peak, "t_p", peak))
    if t_p < MIN_PREPEAK_HOURS:
        raise ParameterError(f"fit_prepeak needs {MIN_PREPEAK_HOURS} pre-peak hours, got {t_p}")
    pre_t = np.arange(t_p, dtype=float)
    pre_s = observed[:t_p]
    tss = max(float(np.sum((pre_s - pre_s.mean()) ** 2)), 1e-12)
    guess = initial_guess(observed, t_p)
    z_alpha = _alpha_to(guess["alpha_c"])
    starts = [
        np.array([z_alpha, guess["t_c"], math.log(guess["tau_minus"] * scale)])
        for scale in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
    ]
    theta, value, converged = multistart_minimize(
        lambda th: _prepeak_objective(pre_t, pre_s, t_p, tss, th)[0], starts, options
    )
    tau_minus = float(np.clip(math.exp(theta[2]), *TAU_BOUNDS))
    value, (a_minus, b_minus) = _prepeak_objective(pre_t, pre_s, t_p, tss, (theta[0], theta[1], math.log(tau_minus)))
    rss = value * tss
    noise = max(rss / max(t_p - 5, 1), NOISE_FLOOR)
    identifiable = a_minus > 1e-3 * max(b_minus, 1.0)
    return PrepeakFit(
        alpha_c=_alpha_from(theta[0]),
        t_c=float(theta[1]) % PERIOD_HOURS,
        a_minus=float(a_minus),
        b_minus=float(b_minus),
        tau_minus=tau_minus,
        noise_variance=float(noise),
        converged=converged,
        tau_identifiable=bool(identifiable),
        n_points=t_p,
        level=float(pre_s.mean()),
    )


def fitted_curve(params, n_hours):
    """Fitted values on every hour, with the peak hour left as NaN."""
    return model_curve(params, n_hours)
