"""Sigmoid prediction, learner/adversary logistic losses and their analytic derivatives.

Row-major flattening is used throughout: entry ``(i, k)`` of the adversary
matrix ``X`` maps to position ``i * q + k`` of ``vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import BilevelProblem

PROB_CLAMP = 1e-12


class DomainError(ValueError):
    pass


def sigmoid(w, x):
    """1 / (1 + exp(-w.x)); ``x`` may be a vector or a matrix of row instances."""
    return expit(np.asarray(x, dtype=float) @ np.asarray(w, dtype=float))


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError("probability outside (0, 1)")
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def learner_loss(p, y):
    """-y log p - (1 - y) log(1 - p), with p clamped away from {0, 1}."""
    p = _check_prob(p)
    y = np.asarray(y, dtype=float)
    out = -y * np.log(p) - (1.0 - y) * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def adversary_loss(p, y):
    """Logistic loss with the label flipped: (y - 1) log p - y log(1 - p)."""
    p = _check_prob(p)
    y = np.asarray(y, dtype=float)
    out = (y - 1.0) * np.log(p) - y * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def _weights(n, m, normalize):
    if normalize:
        return 1.0 / n, 1.0 / m
    return 1.0, 1.0


def objective_terms(w, D, gamma, X, Y, rho=None, normalize=True):
    """(static, adversary, ridge) terms of the learner objective."""
    a_n, a_m = _weights(len(gamma), len(Y), normalize)
    static = a_n * np.sum(learner_loss(sigmoid(w, D), gamma))
    adv = a_m * np.sum(learner_loss(sigmoid(w, X), Y))
    ridge = 0.0 if rho is None else float(np.dot(w, w)) / rho
    return float(static), float(adv), ridge


def upper_value(w, D, gamma, X, Y, rho=None, normalize=True) -> float:
    return sum(objective_terms(w, D, gamma, X, Y, rho, normalize))


def lower_value(w, X, Y, normalize=True) -> float:
    a_m = 1.0 / len(Y) if normalize else 1.0
    return float(a_m * np.sum(adversary_loss(sigmoid(w, X), Y)))


def upper_objective(w, p: BilevelProblem, X=None) -> float:
    X = p.X if X is None else X
    return upper_value(w, p.D, p.gamma, X, p.Y, p.rho, p.params.normalize)


def lower_objective(w, p: BilevelProblem, X=None) -> float:
    X = p.X if X is None else X
    return lower_value(w, X, p.Y, p.params.normalize)


@dataclass(frozen=True)
class GradientBundle:
    dF_dw: np.ndarray
    dF_dX: np.ndarray
    df_dw: np.ndarray
    df_dX: np.ndarray
    d2F_dww: np.ndarray
    d2f_dww: np.ndarray
    d2F_dwX: np.ndarray
    d2f_dwX: np.ndarray
    d2F_dXX: np.ndarray
    d2f_dXX: np.ndarray


def _adversary_blocks(w, X, targets, scale):
    """Derivatives of scale * sum_i L(sigma(w, X_i), targets_i) w.r.t. w and X.

    Returns (d_dw, d_dX, d2_dww, d2_dwX, d2_dXX).
    """
    m, q = X.shape
    s = sigmoid(w, X)
    r = s - targets
    c = s * (1.0 - s)
    d_dw = scale * (X.T @ r)
    d_dX = scale * np.outer(r, w)
    d2_dww = scale * (X.T * c) @ X
    # d/dX_ik of d/dw_a: r_i [a == k] + X_ia c_i w_k
    d2_dwX = np.empty((q, m * q))
    ww = np.outer(w, w)
    d2_dXX = np.zeros((m * q, m * q))
    eye = np.eye(q)
    for i in range(m):
        cols = slice(i * q, (i + 1) * q)
        d2_dwX[:, cols] = scale * (r[i] * eye + c[i] * np.outer(X[i], w))
        d2_dXX[cols, cols] = scale * c[i] * ww
    return d_dw, d_dX, d2_dww, d2_dwX, d2_dXX


def derivatives(w, D, gamma, X, Y, rho=None, normalize=True) -> GradientBundle:
    w = np.asarray(w, dtype=float)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    Y = np.asarray(Y, dtype=float)
    a_n, a_m = _weights(len(gamma), len(Y), normalize)
    q = w.shape[0]

    sD = sigmoid(w, D)
    cD = sD * (1.0 - sD)
    Fw_adv, FX, Fww_adv, FwX, FXX = _adversary_blocks(w, X, Y, a_m)
    fw, fX, fww, fwX, fXX = _adversary_blocks(w, X, 1.0 - Y, a_m)

    ridge_grad = np.zeros(q) if rho is None else (2.0 / rho) * w
    ridge_hess = np.zeros((q, q)) if rho is None else (2.0 / rho) * np.eye(q)
    dF_dw = a_n * (D.T @ (sD - gamma)) + Fw_adv + ridge_grad
    d2F_dww = a_n * (D.T * cD) @ D + Fww_adv + ridge_hess

    return GradientBundle(
        dF_dw=dF_dw,
        dF_dX=FX,
        df_dw=fw,
        df_dX=fX,
        d2F_dww=d2F_dww,
        d2f_dww=fww,
        d2F_dwX=FwX,
        d2f_dwX=fwX,
        d2F_dXX=FXX,
        d2f_dXX=fXX,
    )


def gradients(w, p: BilevelProblem, X=None) -> GradientBundle:
    """All first and second derivative blocks of F and f at (w, X)."""
    X = p.X if X is None else X
    return derivatives(w, p.D, p.gamma, X, p.Y, p.rho, p.params.normalize)
