"""Cosine-similarity constraints g_i(X) = delta - cos(X_i, X0_i) and their derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ZERO_NORM


class ZeroVector(ValueError):
    pass


class WitnessNotFound(RuntimeError):
    pass


def cosine_similarity(x, x0) -> float:
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    nx, n0 = np.linalg.norm(x), np.linalg.norm(x0)
    if nx < ZERO_NORM or n0 < ZERO_NORM:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(x, x0) / (nx * n0), -1.0, 1.0))


def row_cosines(X, X0):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    nX = np.linalg.norm(X, axis=1)
    n0 = np.linalg.norm(X0, axis=1)
    if np.any(nX < ZERO_NORM) or np.any(n0 < ZERO_NORM):
        raise ZeroVector("cosine similarity is undefined for a zero row")
    return np.einsum("ij,ij->i", X, X0) / (nX * n0)


@dataclass(frozen=True)
class ConstraintEval:
    """``values`` (m,), block-diagonal ``jacobian`` (m, m*q), per-row ``hessians`` (m, q, q)."""

    values: np.ndarray
    jacobian: np.ndarray
    hessians: np.ndarray

    def row_gradients(self):
        """The nonzero q-length slice of each jacobian row, as an (m, q) matrix."""
        m = self.values.shape[0]
        q = self.jacobian.shape[1] // m
        return np.stack([self.jacobian[i, i * q:(i + 1) * q] for i in range(m)])


def eval_constraints(X, X0, delta) -> ConstraintEval:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    m, q = X.shape
    nX = np.linalg.norm(X, axis=1)
    n0 = np.linalg.norm(X0, axis=1)
    if np.any(nX < ZERO_NORM) or np.any(n0 < ZERO_NORM):
        raise ZeroVector("constraint undefined: zero row in X or X0")
    d = np.einsum("ij,ij->i", X, X0) / (nX * n0)

    jac = np.zeros((m, m * q))
    hess = np.empty((m, q, q))
    eye = np.eye(q)
    for i in range(m):
        x, x0, r, r0, di = X[i], X0[i], nX[i], n0[i], d[i]
        # gradient of the similarity; g carries the opposite sign
        grad_d = x0 / (r * r0) - di * x / r**2
        jac[i, i * q:(i + 1) * q] = -grad_d
        hess[i] = (
            (np.outer(x, x0) + np.outer(x0, x)) / (r**3 * r0)
            - 3.0 * di * np.outer(x, x) / r**4
            + di * eye / r**2
        )
    return ConstraintEval(values=delta - d, jacobian=jac, hessians=hess)


def check_nonconvexity_witness(x0, delta, margin=1e-10):
    """Two feasible points whose midpoint violates the constraint.

    Requires ``x0`` with equal entries and ``delta < 0``: the feasible set is a
    convex cone when ``delta >= 0``. ``x_a`` sits just inside the boundary
    ``cos(x_a, x0) = delta``; ``x_b`` is ``x_a`` with its first two coordinates
    swapped, which leaves the similarity unchanged.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    q = x0.shape[0]
    if q < 2:
        raise WitnessNotFound("need at least two coordinates to permute")
    if not np.allclose(x0, x0[0]) or x0[0] == 0.0:
        raise WitnessNotFound("x0 must have equal nonzero entries")
    if not -1.0 < delta < 1.0:
        raise WitnessNotFound(f"delta={delta} outside (-1, 1)")
    if delta >= 0.0:
        raise WitnessNotFound("the feasible set is convex for delta >= 0")

    u = np.sign(x0[0]) * np.ones(q) / np.sqrt(q)
    v = np.zeros(q)
    v[0], v[1] = 1.0, -1.0
    v /= np.sqrt(2.0)
    c = delta + margin * (1.0 - delta)
    x_a = c * u + np.sqrt(1.0 - c * c) * v
    x_b = x_a.copy()
    x_b[[0, 1]] = x_b[[1, 0]]
    mid = 0.5 * (x_a + x_b)

    g_a = delta - cosine_similarity(x_a, x0)
    g_b = delta - cosine_similarity(x_b, x0)
    g_mid = delta - cosine_similarity(mid, x0)
    if not (g_a <= 0.0 and g_b <= 0.0 and g_mid > 0.0):
        raise WitnessNotFound(f"construction failed: g = {g_a}, {g_b}, {g_mid}")
    return x_a, x_b, mid
