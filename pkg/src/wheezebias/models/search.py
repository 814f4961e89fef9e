"""Hyperparameter search on a held-out quarter of the training set.

Candidates are scored by validation MCC and the best one is returned.
Classical models use seeded random search over log-uniform ranges; the
CNN walks its (small) architecture grid in a seeded order.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, ConvergenceError, SearchError, WheezeBiasError
from ..evaluation import confusion_from_predictions, metrics
from .base import BOOST, CNN, FAMILIES, LDA, LOGISTIC, SVM_LINEAR, SVM_RBF, TrainedModel, check_binary
from .boost import train_logitboost
from .cnn import CnnArchitecture, TrainConfig, train_cnn
from .linear import train_lda, train_logistic
from .svm import train_svm

log = logging.getLogger(__name__)

VAL_FRACTION = 0.25
DEFAULT_BUDGET = 30
DEFAULT_LOGISTIC_L2 = 1e-3

LDA_RANGE = (1e-6, 1.0)
SVM_RANGE = (1e-3, 1e3)
BOOST_NLEARN_RANGE = (10, 500)
BOOST_RATE_RANGE = (1e-3, 1.0)
CNN_GRID = {
    "conv_size": (3, 5, 7),
    "conv_filters": (32, 64),
    "pool_size": (2, 4),
    "fc1_size": (10, 20),
}


def _log_uniform(rng, lo, hi):
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def candidates(family: str, budget: int, rng: np.random.Generator) -> list[dict]:
    if family == LOGISTIC:
        return [{"l2": DEFAULT_LOGISTIC_L2}]
    if family == LDA:
        return [{"delta": _log_uniform(rng, *LDA_RANGE), "gamma": _log_uniform(rng, *LDA_RANGE)}
                for _ in range(budget)]
    if family in (SVM_LINEAR, SVM_RBF):
        return [{"box_constraint": _log_uniform(rng, *SVM_RANGE),
                 "kernel_scale": _log_uniform(rng, *SVM_RANGE)} for _ in range(budget)]
    if family == BOOST:
        lo, hi = BOOST_NLEARN_RANGE
        return [{"n_learn": int(rng.integers(lo, hi + 1)),
                 "learn_rate": _log_uniform(rng, *BOOST_RATE_RANGE)} for _ in range(budget)]
    if family == CNN:
        grid = [dict(zip(CNN_GRID, combo)) for combo in itertools.product(*CNN_GRID.values())]
        order = rng.permutation(len(grid))
        return [grid[i] for i in order[:budget]]
    raise ArgumentError(f"unknown model family {family!r}")


def train(family: str, X, y, params: dict, cnn_config: TrainConfig | None = None,
          cnn_input_shape=None) -> TrainedModel:
    """Fit one family with explicit hyperparameters.

    An SVM that hits its iteration cap is kept (best iterate) with a warning.
    """
    if family == LOGISTIC:
        return train_logistic(X, y, **params)
    if family == LDA:
        return train_lda(X, y, **params)
    if family in (SVM_LINEAR, SVM_RBF):
        kernel = "linear" if family == SVM_LINEAR else "rbf"
        try:
            return train_svm(X, y, kernel=kernel, **params)
        except ConvergenceError as exc:
            log.warning("%s %s: %s; keeping best iterate", family, params, exc)
            return exc.best
    if family == BOOST:
        return train_logitboost(X, y, **params)
    if family == CNN:
        arch_params = dict(params)
        if cnn_input_shape is not None:
            arch_params["input_shape"] = tuple(cnn_input_shape)
        return train_cnn(X, y, CnnArchitecture(**arch_params), cnn_config or TrainConfig())
    raise ArgumentError(f"unknown model family {family!r}")


def stratified_split(y, fraction: float, rng: np.random.Generator):
    """(train_idx, val_idx) with ``fraction`` of each class in validation."""
    y = np.asarray(y)
    val = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(fraction * idx.size))
        n_val = min(max(n_val, 1), idx.size - 1) if idx.size > 1 else 0
        val.append(idx[:n_val])
    val_idx = np.sort(np.concatenate(val))
    train_idx = np.setdiff1d(np.arange(y.size), val_idx)
    return train_idx, val_idx


@dataclass
class SearchResult:
    family: str
    best_params: dict
    best_mcc: float
    trials: list = field(default_factory=list)


def hyper_search(family: str, X, y, budget: int = DEFAULT_BUDGET, seed: int = 0,
                 cnn_config: TrainConfig | None = None) -> SearchResult:
    """Return the candidate with the highest validation MCC.

    Ties keep the earliest candidate. Each trial is recorded as
    ``{"params", "mcc"}`` or ``{"params", "error"}``.
    """
    if family not in FAMILIES:
        raise ArgumentError(f"unknown model family {family!r}")
    if budget < 1:
        raise ArgumentError("budget must be >= 1")
    y = check_binary(y)
    X = np.asarray(X)
    split_rng, cand_rng = (np.random.Generator(np.random.PCG64(s))
                           for s in np.random.SeedSequence(seed).spawn(2))
    tr, va = stratified_split(y, VAL_FRACTION, split_rng)
    shape = X.shape[1:] if family == CNN else None

    trials = []
    best = None
    for params in candidates(family, budget, cand_rng):
        try:
            model = train(family, X[tr], y[tr], params, cnn_config, shape)
            pred = model.predict(X[va])
            mcc = metrics(confusion_from_predictions(y[va], pred)).mcc
        except (WheezeBiasError, np.linalg.LinAlgError, FloatingPointError) as exc:
            trials.append({"params": params, "error": f"{type(exc).__name__}: {exc}"})
            log.info("%s %s failed: %s", family, params, exc)
            continue
        trials.append({"params": params, "mcc": mcc})
        if best is None or mcc > best[1]:
            best = (params, mcc)
    if best is None:
        raise SearchError(f"all {len(trials)} {family} candidates failed", trials)
    return SearchResult(family, best[0], best[1], trials)
