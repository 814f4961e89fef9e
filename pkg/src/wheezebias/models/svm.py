"""Soft-margin SVM trained with SMO.

Working-set selection uses second-order information (Fan, Chen & Lin,
JMLR 2005), the same rule LIBSVM uses. The full kernel matrix is cached,
which is fine for a few thousand events.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, ConvergenceError
from .base import SVM_LINEAR, SVM_RBF, Standardizer, TrainedModel, check_binary, register_scorer

KERNELS = ("linear", "rbf")
_TAU = 1e-12


def kernel_matrix(A, B, kernel: str, scale: float) -> np.ndarray:
    """linear: u.v / s^2;  rbf: exp(-|u - v|^2 / (2 s^2))."""
    A = np.asarray(A, dtype=np.float64) / scale
    B = np.asarray(B, dtype=np.float64) / scale
    if kernel == "linear":
        return A @ B.T
    if kernel == "rbf":
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-0.5 * np.maximum(sq, 0.0))
    raise ArgumentError(f"kernel must be one of {KERNELS}, got {kernel!r}")


def smo(K, y, C: float, tol: float = 1e-3, max_iter: int = 200_000):
    """Solve min 1/2 a'Qa - e'a s.t. y'a = 0, 0 <= a <= C with Q = yy'K.

    ``y`` is in {-1, +1}. Returns ``(alpha, b, iterations, violation)``.
    Raises :class:`ConvergenceError` with ``best=(alpha, b)`` at the cap.
    """
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K).copy()
    violation = np.inf
    for it in range(max_iter):
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        score = -y * G
        i = int(np.argmax(np.where(up, score, -np.inf)))
        m_up = score[i]
        m_low = np.min(np.where(low, score, np.inf))
        violation = m_up - m_low
        if violation < tol:
            return alpha, _bias(alpha, G, y, C), it, violation

        cand = low & (score < m_up)
        b_ij = m_up - score
        a_ij = diag[i] + diag - 2.0 * K[i]
        a_ij = np.where(a_ij > 0, a_ij, _TAU)
        gain = np.where(cand, -(b_ij * b_ij) / a_ij, np.inf)
        j = int(np.argmin(gain))

        # two-variable update, as in LIBSVM's Solver::Solve
        Ki, Kj = K[i], K[j]
        old_i, old_j = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * Ki[j], _TAU)
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0 and aj < 0:
                aj, ai = 0.0, diff
            elif diff <= 0 and ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0 and ai > C:
                ai, aj = C, C - diff
            elif diff <= 0 and aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > C and ai > C:
                ai, aj = C, total - C
            elif total <= C and aj < 0:
                aj, ai = 0.0, total
            if total > C and aj > C:
                aj, ai = C, total - C
            elif total <= C and ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        # Q_ti = y_t y_i K_ti
        G += y * (y[i] * (ai - old_i) * Ki + y[j] * (aj - old_j) * Kj)

    best = (alpha.copy(), _bias(alpha, G, y, C))
    raise ConvergenceError(
        f"SMO did not converge in {max_iter} iterations (KKT violation {violation:.3g})",
        best=best,
    )


def _bias(alpha, G, y, C):
    """-rho, with rho averaged over free vectors or taken mid-bracket (LIBSVM)."""
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return -yG[free].mean()
    at_upper = alpha >= C
    upper_side = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    ub = yG[upper_side].min() if upper_side.any() else np.inf
    lb = yG[~upper_side].max() if (~upper_side).any() else -np.inf
    if not np.isfinite(ub):
        return -lb
    if not np.isfinite(lb):
        return -ub
    return -(ub + lb) / 2.0


def train_svm(X, y, kernel: str = "linear", box_constraint: float = 1.0,
              kernel_scale: float = 1.0, tol: float = 1e-3, max_iter: int = 200_000) -> TrainedModel:
    """Binary soft-margin SVM on standardized features.

    If SMO hits ``max_iter`` a :class:`ConvergenceError` is raised whose
    ``best`` attribute holds a usable :class:`TrainedModel`.
    """
    if kernel not in KERNELS:
        raise ArgumentError(f"kernel must be one of {KERNELS}, got {kernel!r}")
    if box_constraint <= 0 or kernel_scale <= 0:
        raise ArgumentError("box_constraint and kernel_scale must be positive")
    y01 = check_binary(y)
    ys = 2.0 * y01 - 1.0
    scaler = Standardizer.fit(X)
    Z = scaler.transform(X)
    K = kernel_matrix(Z, Z, kernel, kernel_scale)

    family = SVM_LINEAR if kernel == "linear" else SVM_RBF
    hyper = {"kernel": kernel, "box_constraint": float(box_constraint), "kernel_scale": float(kernel_scale)}

    def build(alpha, b, info):
        sv = alpha > 0
        return TrainedModel(
            family, hyper,
            {"support": Z[sv].copy(), "coef": (alpha * ys)[sv], "b": np.array([b])},
            scaler, info,
        )

    try:
        alpha, b, iters, viol = smo(K, ys, box_constraint, tol, max_iter)
    except ConvergenceError as exc:
        alpha, b = exc.best
        exc.best = build(alpha, b, {"converged": False})
        raise
    return build(alpha, b, {"converged": True, "iterations": iters, "kkt_violation": float(viol),
                            "n_support": int(np.sum(alpha > 0))})


@register_scorer(SVM_LINEAR, SVM_RBF)
def _svm_scores(params, hyper, Z):
    K = kernel_matrix(Z, params["support"], hyper["kernel"], hyper["kernel_scale"])
    return K @ params["coef"] + params["b"][0]
