"""Shared model container and feature standardization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, DegenerateDataError

LOGISTIC = "logistic"
LDA = "lda"
SVM_LINEAR = "svmlin"
SVM_RBF = "svmrbf"
BOOST = "boost"
CNN = "cnn"
FAMILIES = (LOGISTIC, LDA, SVM_LINEAR, SVM_RBF, BOOST, CNN)

# family -> callable(params, hyperparams, inputs) -> scores
_SCORERS: dict = {}


def register_scorer(*families):
    def deco(fn):
        for fam in families:
            _SCORERS[fam] = fn
        return fn
    return deco


@dataclass
class Standardizer:
    """Per-column z-scoring fitted on training rows only."""

    mean: np.ndarray
    std: np.ndarray
    n_fit: int = 0

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ArgumentError("standardize_fit needs a 2-D matrix with at least 2 rows")
        return cls(X.mean(axis=0), X.std(axis=0), X.shape[0])

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros_like(X)
        ok = self.std > 0
        out[:, ok] = (X[:, ok] - self.mean[ok]) / self.std[ok]
        return out


def standardize_fit(X) -> Standardizer:
    return Standardizer.fit(X)


def check_binary(y, min_per_class: int = 1) -> np.ndarray:
    """Labels as a {0, 1} int array; 1 is the wheeze (positive) class."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ArgumentError("labels must be 1-D")
    if not np.all((y == 0) | (y == 1)):
        raise ArgumentError("labels must be 0/1")
    y = y.astype(np.int64)
    counts = np.bincount(y, minlength=2)
    if counts.min() < max(1, min_per_class):
        if counts.min() == 0:
            raise DegenerateDataError("both classes must be present")
        raise DegenerateDataError(f"each class needs >= {min_per_class} samples, got {counts.tolist()}")
    return y


@dataclass
class TrainedModel:
    family: str
    hyperparams: dict
    params: dict = field(default_factory=dict)
    scaler: Standardizer | None = None
    info: dict = field(default_factory=dict)

    def _inputs(self, X):
        if self.scaler is None:
            return np.asarray(X, dtype=np.float64)
        return self.scaler.transform(X)

    def decision_function(self, X) -> np.ndarray:
        """Real-valued scores; positive means wheeze."""
        return _SCORERS[self.family](self.params, self.hyperparams, self._inputs(X))

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.int64)
