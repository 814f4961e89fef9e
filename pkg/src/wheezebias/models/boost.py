"""Two-class LogitBoost with regression stumps.

Follows Friedman, Hastie & Tibshirani (2000), Algorithm 3: each round fits a
weighted least-squares stump to the working response
z = (y* - p) / (p (1 - p)) with weights p (1 - p), and adds half of it,
scaled by the learning rate, to the additive score F. Probabilities are
p = 1 / (1 + exp(-2F)).
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from .base import BOOST, Standardizer, TrainedModel, check_binary, register_scorer

Z_MAX = 4.0
MIN_WEIGHT = 1e-12
MAX_HALVINGS = 30


def _log_loss(F, ys):
    return float(np.mean(np.logaddexp(0.0, -2.0 * ys * F)))


def fit_stump(Xs, order, z, w):
    """Weighted least-squares stump.

    Parameters
    ----------
    Xs : (n, d) array
        Columns of X sorted ascending (``X[order, j]`` per column).
    order : (n, d) int array
        Column-wise argsort of X.
    z, w : (n,) arrays
        Response and weights.

    Returns
    -------
    feature, threshold, left_value, right_value
        Samples with ``x[feature] <= threshold`` take ``left_value``.
    """
    n, d = Xs.shape
    ws = w[order]
    wzs = (w * z)[order]
    W_left = np.cumsum(ws, axis=0)[:-1]
    S_left = np.cumsum(wzs, axis=0)[:-1]
    W_tot, S_tot = w.sum(), (w * z).sum()
    W_right, S_right = W_tot - W_left, S_tot - S_left
    valid = (Xs[1:] > Xs[:-1]) & (W_left > 0) & (W_right > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(valid, S_left**2 / W_left + S_right**2 / W_right, -np.inf)
    if not np.isfinite(gain).any():
        c = S_tot / W_tot if W_tot > 0 else 0.0
        return 0, np.inf, c, c
    # first maximum in (feature, position) order keeps ties deterministic
    flat = int(np.argmax(gain.T))
    j, pos = divmod(flat, n - 1)
    thr = 0.5 * (Xs[pos, j] + Xs[pos + 1, j])
    return j, thr, S_left[pos, j] / W_left[pos, j], S_right[pos, j] / W_right[pos, j]


def train_logitboost(X, y, n_learn: int = 100, learn_rate: float = 0.1) -> TrainedModel:
    """LogitBoost ensemble of ``n_learn`` stumps with shrinkage ``learn_rate``.

    A round whose full step would raise the training log-loss is halved
    until it does not, so the recorded loss curve is non-increasing.
    """
    if int(n_learn) != n_learn or n_learn < 1:
        raise ArgumentError("n_learn must be an integer >= 1")
    if not 0.0 < learn_rate <= 1.0:
        raise ArgumentError("learn_rate must lie in (0, 1]")
    y01 = check_binary(y)
    ys = 2.0 * y01 - 1.0
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    order = np.argsort(Z, axis=0, kind="stable")
    Xs = np.take_along_axis(Z, order, axis=0)

    n_learn = int(n_learn)
    feats = np.zeros(n_learn, dtype=np.int64)
    thrs = np.zeros(n_learn)
    lefts = np.zeros(n_learn)
    rights = np.zeros(n_learn)
    F = np.zeros(Z.shape[0])
    losses = [_log_loss(F, ys)]

    for m in range(n_learn):
        p = 1.0 / (1.0 + np.exp(-2.0 * F))
        w = np.maximum(p * (1.0 - p), MIN_WEIGHT)
        z = np.clip((y01 - p) / w, -Z_MAX, Z_MAX)
        j, thr, cl, cr = fit_stump(Xs, order, z, w)
        left = Z[:, j] <= thr
        step = np.where(left, cl, cr) * 0.5 * learn_rate
        scale = 1.0
        for _ in range(MAX_HALVINGS):
            loss = _log_loss(F + scale * step, ys)
            if loss <= losses[-1]:
                break
            scale *= 0.5
        else:
            scale, loss = 0.0, losses[-1]
        F = F + scale * step
        feats[m], thrs[m] = j, thr
        lefts[m], rights[m] = scale * 0.5 * learn_rate * cl, scale * 0.5 * learn_rate * cr
        losses.append(loss)

    return TrainedModel(
        BOOST,
        {"method": "LogitBoost", "n_learn": n_learn, "learn_rate": float(learn_rate)},
        {"feature": feats.astype(np.float64), "threshold": thrs, "left": lefts, "right": rights,
         "train_loss": np.array(losses)},
        scaler,
    )


def _additive_score(params, Z):
    F = np.zeros(Z.shape[0])
    for j, thr, lv, rv in zip(params["feature"].astype(np.int64), params["threshold"],
                              params["left"], params["right"]):
        F += np.where(Z[:, j] <= thr, lv, rv)
    return F


@register_scorer(BOOST)
def _boost_scores(params, hyper, Z):
    return _additive_score(params, Z)
