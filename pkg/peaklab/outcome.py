"""Football result inference from response parameters of a team and its opponent."""
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from sklearn.model_selection import StratifiedKFold
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from peaklab.clustering import fraction_features, spikem_features
from peaklab.config import FEATURE_SETS
from peaklab.errors import DegenerateModelError, ParameterError
from peaklab.parallel import run_parallel

logger = logging.getLogger(__name__)

CLASS_ORDER = ("win", "draw", "lose")
SVM_TOL = 1e-4
SVM_MAX_ITER = 20000


@dataclass(frozen=True, eq=False)
class MatchSample:
    key: str
    features: np.ndarray
    label: str
    feature_set: str


def _log(value):
    return float(np.log(max(value, 1e-3)))


def _response(fit):
    p = fit.params
    return [_log(p.a_plus), _log(p.b_plus), _log(p.tau_plus)]


def _own_features(feature_set, window, fits):
    key = window.event.key
    if feature_set == "fraction":
        return list(fraction_features(window.series, window.peak))
    fit = fits.get(key)
    if fit is None:
        return None
    if feature_set in ("response", "response-opp"):
        return _response(fit) if fit.converged else None
    if feature_set == "spikem-opp":
        return list(spikem_features(fit.params, window.peak.t_p))
    return [_log(fit.a_plus), fit.gamma_plus]


def build_match_samples(feature_set, windows, fits):
    """Samples for every window with a match result.

    ``fits`` maps event keys to the fit the feature set reads (PeakFit,
    SpikeMFit or PowerLawParams). Opponent features are appended for the
    ``-opp`` sets; matches whose opponent is missing are skipped.
    """
    if feature_set not in FEATURE_SETS:
        raise ParameterError(f"unknown feature set {feature_set!r}")
    windows = list(windows)
    by_title = {(w.event.article, w.event.event_date): w for w in windows}
    samples = []
    for window in windows:
        event = window.event
        if not event.has_match_result():
            continue
        try:
            features = _own_features(feature_set, window, fits)
            if features is not None and feature_set.endswith("-opp"):
                opponent = by_title.get((event.outcome.opponent, event.event_date))
                extra = _own_features(feature_set, opponent, fits) if opponent else None
                features = None if extra is None else features + extra
        except ParameterError:
            features = None
        if features is None:
            logger.debug("match_sample_skipped event=%s feature_set=%s", event.key, feature_set)
            continue
        samples.append(MatchSample(event.key, np.asarray(features, dtype=float), event.outcome.result, feature_set))
    return samples


def sample_arrays(samples):
    if not samples:
        raise ParameterError("no match samples")
    widths = {sample.features.size for sample in samples}
    if len(widths) != 1:
        raise ParameterError(f"inconsistent feature lengths {sorted(widths)}")
    return np.vstack([s.features for s in samples]), np.array([s.label for s in samples])


class OutcomeModel:
    """Standardizer plus one-vs-rest linear SVM; ties go to the earlier class in win, draw, lose."""

    def __init__(self, pipeline):
        self.pipeline = pipeline
        self.classes = tuple(pipeline.classes_)

    def decision_scores(self, features):
        scores = self.pipeline.decision_function(np.asarray(features, dtype=float))
        if scores.ndim == 1:
            scores = np.column_stack([-scores, scores])
        order = [label for label in CLASS_ORDER if label in self.classes]
        order += [label for label in self.classes if label not in order]
        columns = [self.classes.index(label) for label in order]
        return scores[:, columns], tuple(order)

    def predict(self, features):
        scores, order = self.decision_scores(features)
        return np.array([order[i] for i in np.argmax(scores, axis=1)])

    def accuracy(self, features, labels):
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def train_linear_svm(features, labels, C=1.0, seed=0):
    """Hinge-loss linear SVM trained in the dual by coordinate descent."""
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        raise DegenerateModelError("training labels contain a single class")
    pipeline = make_pipeline(
        StandardScaler(),
        LinearSVC(C=C, loss="hinge", dual=True, tol=SVM_TOL, max_iter=SVM_MAX_ITER, random_state=seed),
    )
    pipeline.fit(np.asarray(features, dtype=float), labels)
    return OutcomeModel(pipeline)


@dataclass(frozen=True)
class CVResult:
    fold_accuracy: Tuple[float, ...]
    baseline_accuracy: Tuple[float, ...]
    folds: Tuple[int, ...]

    @property
    def mean_accuracy(self):
        return float(np.mean(self.fold_accuracy))

    @property
    def mean_baseline(self):
        return float(np.mean(self.baseline_accuracy))


def majority_label(labels):
    counts = Counter(np.asarray(labels).tolist())
    return max(counts, key=lambda label: (counts[label], -CLASS_ORDER.index(label) if label in CLASS_ORDER else 0))


def crossvalidate(features, labels, folds=5, seed=0, C=1.0, workers=1):
    """Stratified k-fold accuracy next to the majority-class baseline on the same folds.

    A single outcome class, overall or in any training fold, raises
    DegenerateModelError; too few samples for the folds is a ParameterError.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if labels.size < folds:
        raise ParameterError(f"{labels.size} samples cannot fill {folds} folds")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise DegenerateModelError(f"all {labels.size} samples share the outcome {classes[0]!r}")
    if counts.max() < folds:
        raise ParameterError(f"no outcome class has {folds} samples to stratify over")
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(splitter.split(features, labels))
    assignment = np.zeros(labels.size, dtype=int)
    for fold, (_, test) in enumerate(splits):
        assignment[test] = fold

    def run_fold(split):
        train, test = split
        model = train_linear_svm(features[train], labels[train], C=C, seed=seed)
        majority = majority_label(labels[train])
        return model.accuracy(features[test], labels[test]), float(np.mean(labels[test] == majority))

    results = run_parallel(run_fold, splits, workers, "cv")
    return CVResult(
        fold_accuracy=tuple(acc for acc, _ in results),
        baseline_accuracy=tuple(base for _, base in results),
        folds=tuple(int(f) for f in assignment),
    )
