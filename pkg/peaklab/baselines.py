"""Comparison forecasters: SpikeM, the power-law peak model and log-cumulative LR."""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np
from scipy import optimize
from scipy.special import expit, logit

from peaklab.errors import ParameterError
from peaklab.fitting import multistart_minimize, r_squared
from peaklab.model_core import OMEGA, PERIOD_HOURS
from peaklab.parallel import run_parallel

logger = logging.getLogger(__name__)

KERNEL_LAGS = 504
KERNEL_EXPONENT = -1.5
TB_SEARCH_HOURS = 48
SPIKEM_OPTIONS = {"maxiter": 300, "xatol": 1e-6, "fatol": 1e-8}
GAMMA_BOUNDS = (-6.0, 3.0)


@dataclass(frozen=True)
class SpikeMParams:
    u0: float
    beta: float
    t_b: int
    s_b: float
    eps0: float
    p_a: float
    p_s: float

    def __post_init__(self):
        for name in ("u0", "beta", "s_b", "eps0"):
            value = getattr(self, name)
            if not value >= 0.0 or not math.isfinite(value):
                raise ParameterError(f"{name} must be finite and >= 0, got {value}")
        if not 0.0 <= self.p_a <= 1.0:
            raise ParameterError(f"p_a must lie in [0, 1], got {self.p_a}")
        if self.t_b < 0:
            raise ParameterError(f"t_b must be >= 0, got {self.t_b}")
        object.__setattr__(self, "t_b", int(self.t_b))
        object.__setattr__(self, "p_s", float(self.p_s) % PERIOD_HOURS)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**{name: data[name] for name in cls.__dataclass_fields__})

    def vector(self):
        return (self.u0, self.beta, float(self.t_b), self.s_b, self.eps0, self.p_a, self.p_s)


@dataclass(frozen=True)
class SpikeMFit:
    params: SpikeMParams
    r2: float
    converged: bool


def _period_factor(p_a, p_s, hours):
    return 1.0 - 0.5 * p_a * (1.0 + np.sin(OMEGA * (hours + p_s)))


def spikem_simulate(params, horizon):
    """Hourly counts from the SpikeM difference equation on hours 0..horizon-1.

    Counts are zero before the shock hour, which itself carries only the
    background term. The susceptible population is floored at zero.
    """
    horizon = int(horizon)
    if horizon < params.t_b:
        raise ParameterError(f"horizon {horizon} is shorter than the shock time {params.t_b}")
    x = np.zeros(horizon)
    if horizon == params.t_b:
        return x
    kernel_rev = (params.beta * np.arange(1, KERNEL_LAGS + 1, dtype=float) ** KERNEL_EXPONENT)[::-1].copy()
    period = _period_factor(params.p_a, params.p_s, np.arange(horizon, dtype=float))
    x[params.t_b] = period[params.t_b] * params.eps0
    drive = np.zeros(horizon)
    drive[params.t_b] = params.s_b + x[params.t_b]
    u = max(params.u0 - x[params.t_b], 0.0)
    for t in range(params.t_b, horizon - 1):
        span = min(t + 1 - params.t_b, KERNEL_LAGS)
        # drive[k] pairs with lag t + 1 - k
        memory = float(np.dot(drive[t + 1 - span : t + 1], kernel_rev[KERNEL_LAGS - span :]))
        value = period[t + 1] * (u * memory + params.eps0)
        x[t + 1] = value
        drive[t + 1] += value
        u = max(u - value, 0.0)
    return x


def _spikem_unpack(theta, t_b):
    values = np.exp(np.clip(theta[:4], -50.0, 50.0))
    return SpikeMParams(
        u0=float(values[0]),
        beta=float(values[1]),
        t_b=t_b,
        s_b=float(values[2]),
        eps0=float(values[3]),
        p_a=float(expit(theta[4])),
        p_s=float(theta[5]),
    )


def _spikem_loss(observed, tss, t_b, theta):
    try:
        simulated = spikem_simulate(_spikem_unpack(theta, t_b), observed.size)
    except ParameterError:
        return math.inf
    if not np.all(np.isfinite(simulated)):
        return math.inf
    return float(np.sum((observed - simulated) ** 2)) / tss


def _spikem_starts(observed, t_p):
    peak = max(float(observed[t_p]), 1.0)
    after = float(observed[t_p:].sum())
    background = max(float(np.median(observed[:24])), 1e-3)
    u0 = max(2.0 * after, peak)
    starts = []
    for branching in (0.3, 0.8):
        starts.append(
            np.array(
                [
                    math.log(u0),
                    math.log(branching / u0),
                    math.log(peak / branching),
                    math.log(background),
                    float(logit(0.4)),
                    0.0,
                ]
            )
        )
    return starts


def spikem_fit(series, peak, last_hour=None, options=None, workers=1):
    """Least-squares SpikeM fit over every hour up to ``last_hour``.

    Every integer shock hour in [t_p - 48, t_p] is fitted from the full set of
    starts; the hour with the lowest residual wins, ties going to the earlier hour.
    """
    observed = np.asarray(getattr(series, "values", series), dtype=float)
    t_p = int(getattr(peak, "t_p", peak))
    if last_hour is not None:
        observed = observed[: int(last_hour) + 1]
    if not 0 < t_p < observed.size:
        raise ParameterError(f"peak hour {t_p} lies outside the fitted span")
    tss = max(float(np.sum((observed - observed.mean()) ** 2)), 1e-12)
    options = dict(SPIKEM_OPTIONS, **(options or {}))
    starts = _spikem_starts(observed, t_p)
    candidates = list(range(max(t_p - TB_SEARCH_HOURS, 0), t_p + 1))

    def _fit_shock_hour(t_b):
        return multistart_minimize(lambda th: _spikem_loss(observed, tss, t_b, th), starts, options)

    results = run_parallel(_fit_shock_hour, candidates, workers=workers, label="shock_hours")
    best = min(range(len(candidates)), key=lambda index: results[index][1])
    best_tb = candidates[best]
    theta, value, converged = results[best]
    params = _spikem_unpack(theta, best_tb)
    if not converged:
        logger.debug("spikem_not_converged t_p=%d t_b=%d", t_p, best_tb)
    return SpikeMFit(params=params, r2=1.0 - value if math.isfinite(value) else float("nan"), converged=converged)


def spikem_r2(series, params, t_p):
    """R^2 of a SpikeM curve with the peak hour excluded, as for the peak model."""
    observed = np.asarray(getattr(series, "values", series), dtype=float)
    return r_squared(observed, spikem_simulate(params, observed.size), t_p)


@dataclass(frozen=True)
class PowerLawParams:
    a_minus: float
    gamma_minus: float
    a_plus: float
    gamma_plus: float
    t_p: int = 0

    def __post_init__(self):
        if self.a_minus < 0 or self.a_plus < 0:
            raise ParameterError("power-law amplitudes must be >= 0")

    def to_dict(self):
        return asdict(self)


def _powerlaw_branch(distance, observed):
    """Best (amplitude, exponent) for amplitude * distance**exponent."""
    log_distance = np.log(distance)

    def loss(gamma):
        shape = np.exp(gamma * log_distance)
        amplitude = max(float(shape @ observed) / float(shape @ shape), 0.0)
        return float(np.sum((observed - amplitude * shape) ** 2)), amplitude

    grid = np.linspace(*GAMMA_BOUNDS, 91)
    scores = [loss(gamma)[0] for gamma in grid]
    index = int(np.argmin(scores))
    step = grid[1] - grid[0]
    bounds = (max(grid[index] - step, GAMMA_BOUNDS[0]), min(grid[index] + step, GAMMA_BOUNDS[1]))
    result = optimize.minimize_scalar(
        lambda gamma: loss(gamma)[0], bounds=bounds, method="bounded", options={"xatol": 1e-10}
    )
    gamma = float(result.x) if result.fun <= scores[index] else float(grid[index])
    return loss(gamma)[1], gamma


def powerlaw_fit(series, peak, last_hour=None):
    """Least squares of a-(t_p - t)^g- before and a+(t - t_p)^g+ after the peak."""
    observed = np.asarray(getattr(series, "values", series), dtype=float)
    t_p = int(getattr(peak, "t_p", peak))
    if last_hour is not None:
        observed = observed[: int(last_hour) + 1]
    if not 0 < t_p < observed.size - 1:
        raise ParameterError(f"peak hour {t_p} must have data on both sides")
    hours = np.arange(observed.size, dtype=float)
    before, after = hours < t_p, hours > t_p
    a_minus, gamma_minus = _powerlaw_branch(t_p - hours[before], observed[before])
    a_plus, gamma_plus = _powerlaw_branch(hours[after] - t_p, observed[after])
    return PowerLawParams(a_minus, gamma_minus, a_plus, gamma_plus, t_p)


def powerlaw_curve(params, hours):
    """Both branches on ``hours``; the peak hour itself is rejected."""
    hours = np.asarray(hours, dtype=float)
    if np.any(hours == params.t_p):
        raise ParameterError(f"the power-law model is undefined at the peak hour {params.t_p}")
    distance = np.abs(hours - params.t_p)
    return np.where(
        hours < params.t_p,
        params.a_minus * distance ** params.gamma_minus,
        params.a_plus * distance ** params.gamma_plus,
    )


def powerlaw_predict(params, span):
    """Post-peak branch at the hour offsets ``span`` after the peak."""
    offsets = np.asarray(span, dtype=float)
    if np.any(offsets <= 0):
        raise ParameterError("power-law predictions need offsets after the peak")
    return params.a_plus * offsets ** params.gamma_plus


def powerlaw_r2(series, params):
    observed = np.asarray(getattr(series, "values", series), dtype=float)
    fitted = np.full(observed.size, np.nan)
    hours = np.arange(observed.size, dtype=float)
    mask = hours != params.t_p
    fitted[mask] = powerlaw_curve(params, hours[mask])
    return r_squared(observed, fitted, params.t_p)


@dataclass(frozen=True)
class LRTable:
    """Per-offset mean and variance of log R(t) - log R(t_obs)."""

    t_obs: int
    offsets: Tuple[int, ...]
    alpha: Tuple[float, ...]
    sigma2: Tuple[float, ...]
    n_events: int = 0

    def row(self, offset):
        index = offset - self.t_obs - 1
        if not 0 <= index < len(self.offsets):
            raise ParameterError(f"offset {offset} lies outside ({self.t_obs}, {self.offsets[-1]}]")
        return self.alpha[index], self.sigma2[index]


def post_peak_cumulative(series, t_p, horizon):
    """R(t) for offsets 1..horizon after the peak."""
    observed = np.asarray(getattr(series, "values", series), dtype=float)
    segment = observed[t_p + 1 : t_p + 1 + horizon]
    if segment.size < horizon:
        raise ParameterError(f"series ends before {horizon} hours after the peak")
    return np.cumsum(segment)


def lr_train(cumulatives, t_obs, horizon=168):
    """Maximum-likelihood Gaussian per offset on log growth ratios.

    ``cumulatives`` holds R at offsets 1..horizon per training event. Events
    with R(t_obs) = 0 are left out.
    """
    if not 0 < t_obs < horizon:
        raise ParameterError(f"t_obs {t_obs} must lie strictly between 0 and {horizon}")
    rows = [np.asarray(values, dtype=float)[:horizon] for values in cumulatives]
    rows = [values for values in rows if values.size == horizon and values[t_obs - 1] > 0]
    if not rows:
        raise ParameterError("no training event has views by the observation time")
    matrix = np.vstack(rows)
    ratios = np.log(matrix[:, t_obs:]) - np.log(matrix[:, [t_obs - 1]])
    return LRTable(
        t_obs=t_obs,
        offsets=tuple(range(t_obs + 1, horizon + 1)),
        alpha=tuple(float(v) for v in ratios.mean(axis=0)),
        sigma2=tuple(float(v) for v in ratios.var(axis=0)),
        n_events=len(rows),
    )


def lr_predict(table, r_obs, offsets=None):
    """R-hat(t) = R(t_obs) exp(alpha_t + sigma2_t / 2)."""
    alpha = np.asarray(table.alpha)
    sigma2 = np.asarray(table.sigma2)
    predicted = float(r_obs) * np.exp(alpha + sigma2 / 2.0)
    if offsets is None:
        return predicted
    return predicted[np.asarray(offsets, dtype=int) - table.t_obs - 1]


def lr_forecast_hourly(table, r_obs):
    """Hourly views over (t_obs, horizon] by differencing the cumulative forecast."""
    cumulative = lr_predict(table, r_obs)
    return np.diff(np.concatenate([[float(r_obs)], cumulative]))
