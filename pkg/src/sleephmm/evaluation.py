"""Classification metrics, indicator errors and baseline classifiers.

Asleep is the positive class throughout: sensitivity is the fraction of
reference-asleep slots predicted asleep, specificity the fraction of
reference-awake slots predicted awake.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import math
import warnings
from dataclasses import dataclass
from typing import Dict, Hashable, Mapping, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from .errors import InvalidInputError
from .hhmm.params import ObservationSequence
from .preprocessing import SLOT_MINUTES, SLOTS_PER_DAY, WINDOW_START

METRICS = ("accuracy", "sensitivity", "specificity")


# ---------------------------------------------------------------------------
# reference alignment

def episode_to_binary(start_min: float, end_min: float, n_slots: int = SLOTS_PER_DAY,
                      slot_minutes: int = SLOT_MINUTES) -> np.ndarray:
    """Slots covered for more than half their length by ``[start_min, end_min)``."""
    edges = np.arange(n_slots) * slot_minutes
    overlap = np.clip(np.minimum(edges + slot_minutes, end_min) - np.maximum(edges, start_min), 0, None)
    return (overlap > slot_minutes / 2.0).astype(np.int8)


def episodes_to_binary(episodes: Sequence[tuple], n_slots: int = SLOTS_PER_DAY,
                       slot_minutes: int = SLOT_MINUTES) -> np.ndarray:
    """Union of several episodes given as ``(start_min, end_min)`` on the window axis."""
    edges = np.arange(n_slots) * slot_minutes
    covered = np.zeros(n_slots)
    for start, end in episodes:
        covered += np.clip(np.minimum(edges + slot_minutes, end) - np.maximum(edges, start), 0, None)
    return (covered > slot_minutes / 2.0).astype(np.int8)


def window_minutes(local: dt.datetime, date: dt.date, window_start: dt.time = WINDOW_START) -> float:
    return (local - dt.datetime.combine(date, window_start)).total_seconds() / 60.0


# ---------------------------------------------------------------------------
# metrics

@dataclass
class ClassificationMetrics:
    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]
    n_slots: int = 0


def classification_metrics(pred, truth, mask=None) -> ClassificationMetrics:
    """Accuracy, sensitivity and specificity over the masked slots.

    A ratio whose denominator is zero is reported as ``None``.
    """
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise InvalidInputError("prediction and reference lengths differ")
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidInputError("no slots with a reference label")
    p, t = pred[mask], truth[mask]
    tp = int(np.sum(p & t))
    tn = int(np.sum(~p & ~t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    return ClassificationMetrics(
        accuracy=(tp + tn) / p.size,
        sensitivity=tp / (tp + fn) if tp + fn else None,
        specificity=tn / (tn + fp) if tn + fp else None,
        n_slots=int(p.size),
    )


def summarize(per_sequence: Sequence[ClassificationMetrics]) -> Dict[str, dict]:
    """Mean and (population) standard deviation of each metric over the defined values."""
    out = {}
    for name in METRICS:
        vals = np.array([getattr(m, name) for m in per_sequence if getattr(m, name) is not None])
        out[name] = {
            "mean": float(vals.mean()) if vals.size else None,
            "std": float(vals.std()) if vals.size else None,
            "n": int(vals.size),
        }
    return out


@dataclass
class IndicatorError:
    rmse: float
    mae: float
    n: int


def indicator_errors(pred: Mapping[Hashable, object], truth: Mapping[Hashable, object]) -> Dict[str, IndicatorError]:
    """RMSE and MAE in minutes per indicator field, over keys present on both sides.

    ``pred`` and ``truth`` map a key such as ``(subject, date)`` to a
    :class:`~sleephmm.indicators.DailyIndicators` or
    :class:`~sleephmm.indicators.WeeklyIndicators` (or ``None``).  Lists are
    accepted too and paired by position.
    """
    if not isinstance(pred, Mapping):
        pred = dict(enumerate(pred))
    if not isinstance(truth, Mapping):
        truth = dict(enumerate(truth))
    keys = [k for k in pred if k in truth and pred[k] is not None and truth[k] is not None]
    if not keys:
        raise InvalidInputError("no paired indicators to compare")
    names = [f.name for f in dataclasses.fields(pred[keys[0]])
             if f.type in ("float", float)]
    out = {}
    for name in names:
        diffs = np.array([getattr(pred[k], name) - getattr(truth[k], name) for k in keys], dtype=float)
        out[name] = IndicatorError(
            rmse=float(math.sqrt(np.mean(diffs ** 2))),
            mae=float(np.mean(np.abs(diffs))),
            n=len(keys),
        )
    return out


# ---------------------------------------------------------------------------
# baselines

def dummy_classifier(strategy: str, train_labels=None, T: int = SLOTS_PER_DAY, seed=None) -> np.ndarray:
    """``uniform``: seeded fair coin per slot.  ``most_frequent``: constant majority label (ties awake)."""
    if strategy == "uniform":
        return np.random.default_rng(seed).integers(0, 2, size=T).astype(np.int8)
    if strategy == "most_frequent":
        labels = np.asarray(train_labels if train_labels is not None else [])
        labels = labels[labels >= 0] if labels.size else labels
        if labels.size == 0:
            raise InvalidInputError("most_frequent needs training labels")
        majority = 1 if np.sum(labels == 1) > np.sum(labels == 0) else 0
        return np.full(T, majority, dtype=np.int8)
    raise InvalidInputError(f"unknown dummy strategy {strategy!r}")


def impute_features(seq: ObservationSequence, impute: str = "zeros",
                    fallback_means: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-slot feature rows with missing cells filled.

    Continuous cells get the sequence's empirical channel mean (or
    ``fallback_means`` when a channel is entirely missing).  Binary cells get
    zero (``impute="zeros"``) or the sequence's most frequent observed symbol
    (``impute="most_frequent"``, ties to zero).
    """
    if impute not in ("zeros", "most_frequent"):
        raise InvalidInputError(f"unknown imputation {impute!r}")
    if not (seq.cont_mask.any() or seq.disc_mask.any()):
        raise InvalidInputError("sequence has no observed cells")
    cont = seq.continuous.copy()
    for c in range(cont.shape[1]):
        obs = seq.cont_mask[:, c]
        if obs.any():
            fill = cont[obs, c].mean()
        elif fallback_means is not None:
            fill = fallback_means[c]
        else:
            fill = 0.0
        cont[~obs, c] = fill
    disc = seq.discrete.astype(float)
    for c in range(disc.shape[1]):
        obs = seq.disc_mask[:, c]
        fill = 0.0
        if impute == "most_frequent" and obs.any():
            vals, counts = np.unique(seq.discrete[obs, c], return_counts=True)
            fill = float(vals[np.argmax(counts)])
        disc[~obs, c] = fill
    return np.hstack([cont, disc])


def _asleep_cluster(centers: np.ndarray, usage_col: int) -> int:
    """Lower actigraphy (column 0) is asleep; ties go to lower usage."""
    order = np.lexsort((centers[:, usage_col], centers[:, 0]))
    return int(order[0])


class _BaselineClassifier:
    model = None
    asleep_label = 0

    def __init__(self, impute: str = "zeros", seed: int = 0):
        self.impute = impute
        self.seed = seed
        self.fallback_means = None

    def _features(self, seqs):
        return np.vstack([impute_features(s, self.impute, self.fallback_means) for s in seqs])

    def fit(self, train_seqs: Sequence[ObservationSequence]):
        seqs = [s for s in train_seqs if s.cont_mask.any() or s.disc_mask.any()]
        if not seqs:
            raise InvalidInputError("no usable training sequences")
        cont = np.concatenate([s.continuous for s in seqs])
        self.fallback_means = np.nanmean(cont, axis=0) if cont.size else None
        return self.fit_features(self._features(seqs))

    def fit_features(self, X: np.ndarray):
        raise NotImplementedError

    def predict_features(self, X: np.ndarray) -> np.ndarray:
        return (self.model.predict(X) == self.asleep_label).astype(np.int8)

    def predict(self, seq: ObservationSequence) -> np.ndarray:
        return self.predict_features(self._features([seq]))


class KMeansClassifier(_BaselineClassifier):
    """Two-cluster k-means on imputed per-slot features."""

    def fit_features(self, X):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.model = KMeans(n_clusters=2, n_init=10, random_state=self.seed).fit(X)
        self.asleep_label = _asleep_cluster(self.model.cluster_centers_, X.shape[1] - 1)
        return self


class GMMClassifier(_BaselineClassifier):
    """Two-component full-covariance Gaussian mixture on imputed per-slot features."""

    def __init__(self, impute: str = "zeros", seed: int = 0, reg_covar: float = 1e-6):
        super().__init__(impute, seed)
        self.reg_covar = reg_covar

    def fit_features(self, X):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.model = GaussianMixture(n_components=2, covariance_type="full", reg_covar=self.reg_covar,
                                         n_init=3, random_state=self.seed).fit(X)
        self.asleep_label = _asleep_cluster(self.model.means_, X.shape[1] - 1)
        return self

    def predict_proba_features(self, X):
        return self.model.predict_proba(X)


def kmeans_classifier(train_seqs, impute: str = "zeros", seed: int = 0) -> KMeansClassifier:
    return KMeansClassifier(impute, seed).fit(train_seqs)


def gmm_classifier(train_seqs, impute: str = "zeros", seed: int = 0) -> GMMClassifier:
    return GMMClassifier(impute, seed).fit(train_seqs)
