"""Logistic-regression baseline and regularized LDA."""

from __future__ import annotations

import logging

import numpy as np
from scipy import linalg

from ..errors import ArgumentError, SingularMatrixError
from .base import LDA, LOGISTIC, Standardizer, TrainedModel, check_binary, register_scorer

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Logistic regression
# --------------------------------------------------------------------------


def _log1pexp(t):
    return np.logaddexp(0.0, t)


def logistic_objective(w, b, Z, y, l2):
    """Mean negative log-likelihood plus (l2/2)|w|^2, and its gradient.

    The intercept ``b`` is not penalized. Returns ``(f, grad_w, grad_b)``.
    """
    t = Z @ w + b
    ys = 2.0 * y - 1.0
    f = np.mean(_log1pexp(-ys * t)) + 0.5 * l2 * (w @ w)
    p = 0.5 * (1.0 + np.tanh(0.5 * t))  # sigmoid, overflow-free
    r = (p - y) / y.size
    return f, Z.T @ r + l2 * w, r.sum()


def train_logistic(X, y, l2: float = 1e-3, tol: float = 1e-6, max_iter: int = 500) -> TrainedModel:
    """Damped Newton on the L2-penalized log-likelihood, started at zero."""
    if l2 < 0:
        raise ArgumentError("l2 must be >= 0")
    y = check_binary(y).astype(np.float64)
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    n, d = Z.shape
    Za = np.hstack([Z, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    penalty = np.full(d + 1, l2)
    penalty[-1] = 0.0

    f, gw, gb = logistic_objective(theta[:-1], theta[-1], Z, y, l2)
    it = 0
    for it in range(1, max_iter + 1):
        g = np.append(gw, gb)
        if np.linalg.norm(g) < tol:
            break
        p = 0.5 * (1.0 + np.tanh(0.5 * (Za @ theta)))
        H = (Za * (p * (1 - p))[:, None]).T @ Za / n + np.diag(penalty)
        H[np.diag_indices_from(H)] += 1e-10
        try:
            step = linalg.solve(H, g, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        # backtracking (Armijo)
        t = 1.0
        while True:
            cand = theta - t * step
            f_new, gw_new, gb_new = logistic_objective(cand[:-1], cand[-1], Z, y, l2)
            if f_new <= f - 1e-4 * t * (g @ step) or t < 1e-10:
                break
            t *= 0.5
        theta, f, gw, gb = cand, f_new, gw_new, gb_new
    grad_norm = float(np.linalg.norm(np.append(gw, gb)))
    return TrainedModel(
        LOGISTIC,
        {"l2": float(l2)},
        {"w": theta[:-1].copy(), "b": np.array([theta[-1]])},
        scaler,
        {"iterations": it, "grad_norm": grad_norm, "objective": float(f)},
    )


@register_scorer(LOGISTIC)
def _logistic_scores(params, hyper, Z):
    return Z @ params["w"] + params["b"][0]


# --------------------------------------------------------------------------
# LDA
# --------------------------------------------------------------------------


def train_lda(X, y, delta: float = 0.0, gamma: float = 0.0) -> TrainedModel:
    """Two-class LDA with shrinkage towards the diagonal and coefficient thresholding.

    The pooled covariance is blended as ``(1 - gamma) S + gamma diag(S)``;
    discriminant coefficients with magnitude below ``delta`` are zeroed.
    Columns with zero pooled variance get a zero coefficient.
    """
    if delta < 0:
        raise ArgumentError("delta must be >= 0")
    if not 0.0 <= gamma <= 1.0:
        raise ArgumentError("gamma must lie in [0, 1]")
    y = check_binary(y, min_per_class=2)
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    d = Z.shape[1]

    mu0, mu1 = Z[y == 0].mean(axis=0), Z[y == 1].mean(axis=0)
    centered = np.where((y == 1)[:, None], Z - mu1, Z - mu0)
    S = centered.T @ centered / (Z.shape[0] - 2)
    S = (1.0 - gamma) * S + gamma * np.diag(np.diag(S))

    live = np.diag(S) > 0
    coef = np.zeros(d)
    if live.any():
        S_live = S[np.ix_(live, live)]
        try:
            chol = linalg.cho_factor(S_live)
        except linalg.LinAlgError:
            raise SingularMatrixError(
                f"regularized covariance is singular (gamma={gamma}); try a larger gamma"
            ) from None
        coef[live] = linalg.cho_solve(chol, (mu1 - mu0)[live])
    coef[np.abs(coef) < delta] = 0.0

    prior1 = np.mean(y)
    b = -coef @ (mu0 + mu1) / 2.0 + np.log(prior1 / (1.0 - prior1))
    return TrainedModel(
        LDA,
        {"delta": float(delta), "gamma": float(gamma)},
        {"coef": coef, "b": np.array([b])},
        scaler,
        {"n_zeroed": int(np.sum(coef == 0))},
    )


@register_scorer(LDA)
def _lda_scores(params, hyper, Z):
    return Z @ params["coef"] + params["b"][0]
