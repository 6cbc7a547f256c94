"""Gaussian-mixture clustering of fitted events and agreement scoring.

Features are log-transformed where the parameters are heavy tailed, then
z-scored corpus-wide. The number of components is chosen by BIC over a K
range, keeping the best of several seeded restarts per K.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import adjusted_mutual_info_score
from sklearn.mixture import GaussianMixture
from sklearn.preprocessing import StandardScaler

from peaklab.errors import NumericalError, ParameterError
from peaklab.model_core import OMEGA
from peaklab.parallel import run_parallel
from peaklab.seeding import derive_seed

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("log_a_minus", "log_a_plus", "log_tau_minus", "log_tau_plus", "log_b_minus", "log_b_plus", "alpha_c", "t_c")
SINCOS_NAMES = FEATURE_NAMES[:-1] + ("sin_t_c", "cos_t_c")
SPIKEM_NAMES = ("log_u0", "log_beta", "tb_offset", "log_s_b", "log_eps0", "p_a", "p_s")
POWERLAW_NAMES = ("log_a_minus", "gamma_minus", "log_a_plus", "gamma_plus")
FRACTION_NAMES = ("f_minus", "f_peak", "f_plus")
LOG_FLOOR = 1e-3
EM_TOL = 1e-7
EM_MAX_ITER = 500
COVARIANCE_RIDGE = 1e-6
MONOTONE_SLACK = 1e-6


def _floored_log(value):
    return math.log(max(value, LOG_FLOOR))


def build_features(fit, circadian="raw"):
    """Eight features from a PeakFit (or PeakParams); ``circadian="sincos"`` gives nine."""
    p = getattr(fit, "params", fit)
    head = [
        _floored_log(p.a_minus),
        _floored_log(p.a_plus),
        _floored_log(p.tau_minus),
        _floored_log(p.tau_plus),
        _floored_log(p.b_minus),
        _floored_log(p.b_plus),
        p.alpha_c,
    ]
    if circadian == "sincos":
        return np.array(head + [math.sin(OMEGA * p.t_c), math.cos(OMEGA * p.t_c)])
    if circadian != "raw":
        raise ParameterError(f"unknown circadian feature mode {circadian!r}")
    return np.array(head + [p.t_c])


def spikem_features(params, t_p):
    return np.array([
        _floored_log(params.u0),
        _floored_log(params.beta),
        float(params.t_b - t_p),
        _floored_log(params.s_b),
        _floored_log(params.eps0),
        params.p_a,
        params.p_s,
    ])


def powerlaw_features(params):
    return np.array([_floored_log(params.a_minus), params.gamma_minus, _floored_log(params.a_plus), params.gamma_plus])


def fraction_features(series, peak):
    """Shares of window views before, at and after the peak hour."""
    counts = np.asarray(getattr(series, "values", series), dtype=float)
    t_p = int(getattr(peak, "t_p", peak))
    total = float(counts.sum())
    if total <= 0.0:
        raise ParameterError("fraction features need a window with views")
    f_peak = counts[t_p] / total
    f_minus = counts[:t_p].sum() / total
    return (float(f_minus), float(f_peak), float(1.0 - f_minus - f_peak))


def feature_matrix(kind, windows, fits=None, circadian="raw"):
    """(event keys, feature rows) for one featureization.

    ``fits`` maps event keys to the fitted object the featureization needs:
    PeakFit for ``proposed``, SpikeMFit for ``spikem`` and PowerLawParams for
    ``powerlaw``. Events without a usable fit or with an empty window are
    skipped.
    """
    widths = {"proposed": 9 if circadian == "sincos" else 8, "spikem": 7, "powerlaw": 4, "fraction": 3}
    if kind not in widths:
        raise ParameterError(f"unknown feature kind {kind!r}")
    keys, rows = [], []
    fits = fits or {}
    for window in windows:
        key = window.event.key
        try:
            if kind == "fraction":
                row = np.array(fraction_features(window.series, window.peak))
            elif key not in fits:
                continue
            elif kind == "proposed":
                if not fits[key].converged:
                    continue
                row = build_features(fits[key], circadian)
            elif kind == "spikem":
                row = spikem_features(fits[key].params, window.peak.t_p)
            else:
                row = powerlaw_features(fits[key])
        except ParameterError as exc:
            logger.info("feature_skipped event=%s reason=%s", key, exc)
            continue
        if np.all(np.isfinite(row)):
            keys.append(key)
            rows.append(row)
    return keys, np.vstack(rows) if rows else np.empty((0, widths[kind]))


@dataclass(frozen=True, eq=False)
class ClusterModel:
    k: int
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    bic: float
    log_likelihood: float
    seed: int
    converged: bool
    mixture: Optional[GaussianMixture] = field(default=None, repr=False)

    def standardize(self, features):
        return (np.asarray(features, dtype=float) - self.center) / self.scale

    def predict(self, features):
        return self.mixture.predict(self.standardize(features))

    def feature_centers(self):
        """Component means mapped back to the unstandardized feature space."""
        return self.means * self.scale + self.center

    def parameter_centers(self, names=FEATURE_NAMES):
        centers = []
        for row in self.feature_centers():
            center = {}
            for name, value in zip(names, row):
                if name.startswith("log_"):
                    center[name[4:]] = float(math.exp(value))
                else:
                    center[name] = float(value)
            centers.append(center)
        return centers


def standardize_features(features, enabled=True):
    """(standardized matrix, center, scale); constant columns keep scale 1."""
    features = np.asarray(features, dtype=float)
    if not enabled:
        return features, np.zeros(features.shape[1]), np.ones(features.shape[1])
    scaler = StandardScaler().fit(features)
    return scaler.transform(features), scaler.mean_, scaler.scale_


def _em_monotone(features, k, seed):
    """Run EM one iteration at a time and check the log-likelihood never drops."""
    mixture = GaussianMixture(
        n_components=k, covariance_type="full", reg_covar=COVARIANCE_RIDGE,
        max_iter=1, warm_start=True, random_state=seed, tol=EM_TOL,
    )
    previous = -math.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for step in range(EM_MAX_ITER):
            mixture.fit(features)
            current = float(mixture.score(features))
            if current < previous - MONOTONE_SLACK * max(abs(previous), 1.0):
                raise NumericalError(f"EM log-likelihood decreased at step {step}: {previous} -> {current}")
            if abs(current - previous) < EM_TOL:
                break
            previous = current
    return mixture


def fit_gmm(features, k, seed, standardize=True, check_monotone=False):
    """Full-covariance Gaussian mixture with ``k`` components.

    ``features`` is the raw feature matrix; standardization is part of the
    returned model.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"K={k} needs 1 <= K <= n={n}")
    scaled, center, scale = standardize_features(features, standardize)
    if check_monotone:
        mixture = _em_monotone(scaled, k, seed)
    else:
        mixture = GaussianMixture(
            n_components=k, covariance_type="full", reg_covar=COVARIANCE_RIDGE,
            max_iter=EM_MAX_ITER, tol=EM_TOL, random_state=seed,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            mixture.fit(scaled)
    return ClusterModel(
        k=k,
        weights=mixture.weights_,
        means=mixture.means_,
        covariances=mixture.covariances_,
        center=center,
        scale=scale,
        bic=float(mixture.bic(scaled)),
        log_likelihood=float(mixture.score(scaled) * n),
        seed=seed,
        converged=bool(mixture.converged_),
        mixture=mixture,
    )


def _k_values(k_range, n):
    k_min, k_max = k_range
    if k_min < 1 or k_max < k_min:
        raise ParameterError(f"invalid K range [{k_min}, {k_max}]")
    if k_min > n:
        raise ParameterError(f"K={k_min} exceeds the {n} samples")
    return range(k_min, min(k_max, n) + 1)


def select_k(features, k_range=(1, 12), restarts=10, seed=0, standardize=True, workers=1):
    """Model with the lowest BIC over ``k_range``, best of ``restarts`` seeds per K."""
    features = np.asarray(features, dtype=float)
    jobs = [(k, r) for k in _k_values(k_range, features.shape[0]) for r in range(restarts)]
    models = run_parallel(
        lambda job: fit_gmm(features, job[0], derive_seed(seed, "gmm", job[0], job[1]), standardize),
        jobs, workers, "gmm",
    )
    best = min(models, key=lambda model: (model.bic, model.k))
    logger.info("select_k k=%d bic=%.3f candidates=%d", best.k, best.bic, len(models))
    return best


def adjusted_mutual_information(labels_a, labels_b):
    """Chance-adjusted MI with the hypergeometric expectation and arithmetic mean.

    Two single-class partitions score 1.0 by convention.
    """
    labels_a, labels_b = list(labels_a), list(labels_b)
    if len(labels_a) != len(labels_b):
        raise ParameterError("label sequences differ in length")
    if len(set(labels_a)) == 1 and len(set(labels_b)) == 1:
        logger.debug("ami_degenerate single class on both sides")
        return 1.0
    return float(adjusted_mutual_info_score(labels_a, labels_b, average_method="arithmetic"))


def _quartiles(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return dict(median=float("nan"), q25=float("nan"), q75=float("nan"))
    q25, median, q75 = np.percentile(values, [25, 50, 75])
    return dict(median=float(median), q25=float(q25), q75=float(q75))


@dataclass(frozen=True)
class AMIRun:
    restart: int
    k: int
    bic: float
    ami: float


def ami_distribution(features, labels, k_range=(1, 12), restarts=200, seed=0, standardize=True, workers=1):
    """One BIC-selected clustering per restart, scored against ``labels``.

    Returns ``(runs, summary)`` where summary holds the median and quartiles of
    the AMI values.
    """
    features = np.asarray(features, dtype=float)
    k_values = list(_k_values(k_range, features.shape[0]))

    def one_restart(restart):
        models = [fit_gmm(features, k, derive_seed(seed, "ami", restart, k), standardize) for k in k_values]
        best = min(models, key=lambda model: (model.bic, model.k))
        assigned = best.predict(features)
        return AMIRun(restart, best.k, best.bic, adjusted_mutual_information(labels, assigned))

    runs = run_parallel(one_restart, range(restarts), workers, "ami")
    summary = _quartiles([run.ami for run in runs])
    summary["restarts"] = restarts
    return runs, summary


def cluster_composition(assignments, labels) -> Tuple[dict, ...]:
    """Per-cluster label counts, largest clusters first."""
    counts = {}
    for cluster, label in zip(assignments, labels):
        counts.setdefault(int(cluster), {}).setdefault(label, 0)
        counts[int(cluster)][label] += 1
    ordered = sorted(counts.items(), key=lambda item: -sum(item[1].values()))
    return tuple(dict(cluster=cluster, size=sum(c.values()), labels=dict(sorted(c.items()))) for cluster, c in ordered)
