"""The anticipation/response peak model.

    f_peak(t) = C(t) * D_peak(t)
    C(t)      = 1 + alpha_c * cos(2*pi*(t - t_c) / 24)
    D_peak(t) = a_minus * exp((t - t_p) / tau_minus) + b_minus    for t < t_p
                a_plus * exp(-(t - t_p) / tau_plus) + b_plus       for t > t_p

Time is measured in hours from the series start. Event windows start at
0:00 UTC, so ``t_c`` reads as a UTC clock hour. The model is undefined at the
peak hour itself.
"""
import itertools
import math
from dataclasses import asdict, dataclass, replace
from typing import Tuple

import numpy as np

from peaklab.errors import ParameterError, UndefinedRatioError

PERIOD_HOURS = 24.0
OMEGA = 2.0 * math.pi / PERIOD_HOURS
RHO_WINDOW_HOURS = 168.0

PARAM_FIELDS = (
    "a_minus",
    "b_minus",
    "tau_minus",
    "a_plus",
    "b_plus",
    "tau_plus",
    "alpha_c",
    "t_c",
    "t_p",
)


@dataclass(frozen=True)
class PeakParams:
    a_minus: float
    b_minus: float
    tau_minus: float
    a_plus: float
    b_plus: float
    tau_plus: float
    alpha_c: float
    t_c: float
    t_p: int

    def __post_init__(self):
        for name in ("a_minus", "b_minus", "a_plus", "b_plus"):
            value = getattr(self, name)
            if not value >= 0.0 or not math.isfinite(value):
                raise ParameterError(f"{name} must be finite and >= 0, got {value}")
        for name in ("tau_minus", "tau_plus"):
            value = getattr(self, name)
            if not value > 0.0 or not math.isfinite(value):
                raise ParameterError(f"{name} must be finite and > 0, got {value}")
        if not 0.0 <= self.alpha_c < 1.0:
            raise ParameterError(f"alpha_c must lie in [0, 1), got {self.alpha_c}")
        if not math.isfinite(self.t_c):
            raise ParameterError(f"t_c must be finite, got {self.t_c}")
        object.__setattr__(self, "t_c", float(self.t_c) % PERIOD_HOURS)
        object.__setattr__(self, "t_p", int(self.t_p))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        missing = [name for name in PARAM_FIELDS if name not in data]
        if missing:
            raise ParameterError(f"missing peak parameter fields: {', '.join(missing)}")
        values = {name: float(data[name]) for name in PARAM_FIELDS}
        values["t_p"] = int(round(values["t_p"]))
        return cls(**values)

    def with_response(self, a_plus, b_plus, tau_plus):
        return replace(self, a_plus=a_plus, b_plus=b_plus, tau_plus=tau_plus)

    @property
    def anticipation(self):
        return (self.a_minus, self.b_minus, self.tau_minus)

    @property
    def response(self):
        return (self.a_plus, self.b_plus, self.tau_plus)


def circadian(alpha_c, t_c, t):
    return 1.0 + alpha_c * np.cos(OMEGA * (np.asarray(t, dtype=float) - t_c))


def eval_circadian(params, t):
    value = circadian(params.alpha_c, params.t_c, t)
    return float(value) if np.ndim(value) == 0 else value


def _check_not_peak(params, t):
    if np.any(t == params.t_p):
        raise ParameterError(f"the model is undefined at the peak hour t_p={params.t_p}")


def envelope(params, t):
    """Vectorized D_peak. ``t`` must not contain the peak hour."""
    t = np.asarray(t, dtype=float)
    _check_not_peak(params, t)
    dt = t - params.t_p
    before = dt < 0
    out = np.empty_like(dt)
    out[before] = params.a_minus * np.exp(dt[before] / params.tau_minus) + params.b_minus
    out[~before] = params.a_plus * np.exp(-dt[~before] / params.tau_plus) + params.b_plus
    return out


def eval_envelope(params, t):
    value = envelope(params, np.atleast_1d(t))
    return float(value[0]) if np.ndim(t) == 0 else value


def eval_model(params, t):
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    value = circadian(params.alpha_c, params.t_c, t_arr) * envelope(params, t_arr)
    return float(value[0]) if np.ndim(t) == 0 else value


def model_curve(params, n_hours):
    """Model values on 0..n_hours-1 with NaN at the peak hour."""
    hours = np.arange(n_hours, dtype=float)
    out = np.full(n_hours, np.nan)
    mask = hours != params.t_p
    out[mask] = eval_model(params, hours[mask])
    return out


def envelope_area(amplitude, baseline, tau, window):
    return amplitude * tau * -math.expm1(-window / tau) + baseline * window


def anticipation_response_ratio(params, window_M=RHO_WINDOW_HOURS):
    """rho = S_minus / S_plus, the envelope areas over [-M, 0] and [0, M]."""
    if not window_M > 0:
        raise ParameterError(f"window_M must be positive, got {window_M}")
    s_minus = envelope_area(params.a_minus, params.b_minus, params.tau_minus, window_M)
    s_plus = envelope_area(params.a_plus, params.b_plus, params.tau_plus, window_M)
    if s_plus <= 0.0:
        raise UndefinedRatioError("response area is zero; rho is undefined")
    return s_minus / s_plus


@dataclass(frozen=True)
class RegionMix:
    p_us: float = 1.0 / 3.0
    p_uk: float = 1.0 / 3.0
    p_au: float = 1.0 / 3.0
    t_ref: Tuple[float, float, float] = (20.6, 16.2, 5.9)
    alpha_bar: float = 0.9

    def __post_init__(self):
        weights = self.weights
        if min(weights) < 0.0:
            raise ParameterError(f"region weights must be nonnegative, got {weights}")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ParameterError(f"region weights must sum to 1, got {sum(weights)}")

    @property
    def weights(self):
        return (self.p_us, self.p_uk, self.p_au)

    def dominant(self):
        return ("us", "uk", "au")[int(np.argmax(self.weights))]

    def circadian(self, t):
        return sum(
            weight * circadian(self.alpha_bar, t_ref, t)
            for weight, t_ref in zip(self.weights, self.t_ref)
        )


REGION_TEMPLATE = RegionMix()


def combine_circadian(weights, t_ref=REGION_TEMPLATE.t_ref, alpha_bar=REGION_TEMPLATE.alpha_bar):
    """Collapse a weighted sum of regional waves into a single (alpha_c, t_c) pair."""
    phasor = sum(
        weight * alpha_bar * complex(math.cos(OMEGA * t), math.sin(OMEGA * t))
        for weight, t in zip(weights, t_ref)
    )
    return abs(phasor), (math.atan2(phasor.imag, phasor.real) / OMEGA) % PERIOD_HOURS


def _simplex_face_solution(basis, target, face):
    sub = basis[:, face]
    size = len(face)
    kkt = np.zeros((size + 1, size + 1))
    kkt[:size, :size] = 2.0 * sub.T @ sub
    kkt[:size, size] = 1.0
    kkt[size, :size] = 1.0
    rhs = np.concatenate([2.0 * sub.T @ target, [1.0]])
    solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:size]
    weights = np.zeros(basis.shape[1])
    weights[list(face)] = solution
    return weights


def decompose_circadian(alpha_c, t_c, mix_template=REGION_TEMPLATE):
    """Least-squares regional weights on the probability simplex.

    Minimizes the squared distance between C(t) and the weighted regional waves
    over one period sampled hourly. Every face of the simplex is solved as an
    equality-constrained problem and the best feasible one wins; ties go to the
    smallest-norm weights.
    """
    hours = np.arange(int(PERIOD_HOURS), dtype=float)
    target = circadian(alpha_c, t_c, hours)
    basis = np.column_stack(
        [circadian(mix_template.alpha_bar, t_ref, hours) for t_ref in mix_template.t_ref]
    )
    best = None
    for size in (3, 2, 1):
        for face in itertools.combinations(range(3), size):
            weights = _simplex_face_solution(basis, target, face)
            if weights.min() < -1e-10:
                continue
            weights = np.clip(weights, 0.0, None)
            weights /= weights.sum()
            cost = float(np.sum((target - basis @ weights) ** 2))
            key = (round(cost, 12), float(weights @ weights))
            if best is None or key < best[0]:
                best = (key, weights)
    p_us, p_uk, p_au = best[1]
    return RegionMix(
        p_us=float(p_us),
        p_uk=float(p_uk),
        p_au=float(p_au),
        t_ref=mix_template.t_ref,
        alpha_bar=mix_template.alpha_bar,
    )
