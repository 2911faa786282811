"""Fischer-Burmeister reformulation of the pessimistic stationarity conditions.

Unknowns are stacked as ``x = (w, vec(X), beta, beta_hat, lam)`` with
``vec`` row-major. The residual is

    phi = ( grad_w F,
            grad_X F - lam grad_X f - Jg^T beta,
            grad_X f + Jg^T beta_hat,
            fb(beta, -g), fb(beta_hat, -g), fb(lam, 0) )

In the unconstrained variant the constraint terms, beta, beta_hat and their
FB rows are dropped, leaving ``x = (w, vec(X), lam)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .constraints import eval_constraints
from .model import BilevelProblem

_FB_ORIGIN = np.sqrt(2.0) / 2.0 - 1.0


class PreconditionFailed(ValueError):
    pass


def fb(a, b):
    """Fischer-Burmeister function sqrt(a^2 + b^2) - a - b."""
    return np.hypot(a, b) - a - b


def fb_newton_derivative(a, b):
    """Element of the Newton derivative of ``fb`` at (a, b), vectorised."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = np.hypot(a, b)
    origin = r == 0.0
    safe = np.where(origin, 1.0, r)
    da = np.where(origin, _FB_ORIGIN, a / safe - 1.0)
    db = np.where(origin, _FB_ORIGIN, b / safe - 1.0)
    if da.ndim == 0:
        return float(da), float(db)
    return da, db


@dataclass(frozen=True)
class StationarityPoint:
    """Primal block ``z = (w, vec(X))`` and multipliers ``zeta = (beta, beta_hat, lam)``."""

    z: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float).ravel()
        zeta = np.array(self.zeta, dtype=float).ravel()
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(zeta))):
            raise ValueError("stationarity point has non-finite entries")
        z.setflags(write=False)
        zeta.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "zeta", zeta)

    @classmethod
    def from_parts(cls, w, X, beta=None, beta_hat=None, lam=0.0):
        X = np.atleast_2d(X)
        parts = [np.ravel(beta if beta is not None else [])]
        parts.append(np.ravel(beta_hat if beta_hat is not None else []))
        parts.append([lam])
        return cls(np.concatenate([np.ravel(w), X.ravel()]), np.concatenate(parts))

    @property
    def vector(self):
        return np.concatenate([self.z, self.zeta])

    def w(self, q):
        return self.z[:q]

    def X(self, q):
        return self.z[q:].reshape(-1, q)

    @property
    def lam(self):
        return float(self.zeta[-1])


@dataclass(frozen=True)
class ResidualEval:
    phi: np.ndarray
    newton_jacobian: np.ndarray
    merit: float
    grad_merit: np.ndarray


class StationaritySystem:
    """Residual map of the stationarity conditions for one ``BilevelProblem``.

    ``lm_solve`` drives any object exposing ``evaluate``, ``residual`` and
    ``is_admissible`` over flat vectors.
    """

    def __init__(self, problem: BilevelProblem, constrained: bool = True, guard_ratio: float = 1e-8):
        self.problem = problem
        self.constrained = constrained
        self.guard_ratio = guard_ratio
        self.q = problem.q
        self.m = problem.m
        q, m = self.q, self.m
        self.n_primal = q + m * q
        self.n_mult = 2 * m + 1 if constrained else 1
        self.n_unknowns = self.n_primal + self.n_mult
        self.n_residuals = q + 2 * m * q + self.n_mult
        self._origin_norms = np.linalg.norm(problem.X0, axis=1)

    # -- packing -----------------------------------------------------------
    def split(self, x):
        q, m = self.q, self.m
        x = np.asarray(x, dtype=float)
        w = x[:q]
        X = x[q:self.n_primal].reshape(m, q)
        if self.constrained:
            beta = x[self.n_primal:self.n_primal + m]
            beta_hat = x[self.n_primal + m:self.n_primal + 2 * m]
        else:
            beta = beta_hat = np.zeros(m)
        return w, X, beta, beta_hat, x[-1]

    def pack(self, pt: StationarityPoint):
        if pt.z.shape[0] != self.n_primal or pt.zeta.shape[0] != self.n_mult:
            raise ValueError(
                f"point has {pt.z.shape[0]}+{pt.zeta.shape[0]} entries, "
                f"system expects {self.n_primal}+{self.n_mult}"
            )
        return pt.vector

    def unpack(self, x) -> StationarityPoint:
        x = np.asarray(x, dtype=float)
        return StationarityPoint(x[:self.n_primal], x[self.n_primal:])

    def is_admissible(self, x) -> bool:
        """Rows of X must stay away from zero so the cosine constraint is defined."""
        _, X, *_ = self.split(x)
        if not np.all(np.isfinite(x)):
            return False
        if not self.constrained:
            return True
        return bool(np.all(np.linalg.norm(X, axis=1) >= self.guard_ratio * self._origin_norms))

    # -- residual ----------------------------------------------------------
    def _pieces(self, x):
        p = self.problem
        w, X, beta, beta_hat, lam = self.split(x)
        gb = losses.derivatives(w, p.D, p.gamma, X, p.Y, p.rho, p.params.normalize)
        ce = eval_constraints(X, p.X0, p.delta) if self.constrained else None
        return w, X, beta, beta_hat, lam, gb, ce

    def assemble_H(self, x):
        w, X, beta, beta_hat, lam, gb, ce = self._pieces(x)
        return self._H(beta, beta_hat, lam, gb, ce)

    def _H(self, beta, beta_hat, lam, gb, ce):
        H1 = gb.dF_dw
        H2 = gb.dF_dX.ravel() - lam * gb.df_dX.ravel()
        H3 = gb.df_dX.ravel().copy()
        if ce is not None:
            H2 = H2 - ce.jacobian.T @ beta
            H3 = H3 + ce.jacobian.T @ beta_hat
        return np.concatenate([H1, H2, H3])

    def residual(self, x):
        w, X, beta, beta_hat, lam, gb, ce = self._pieces(x)
        H = self._H(beta, beta_hat, lam, gb, ce)
        if ce is None:
            return np.concatenate([H, [fb(lam, 0.0)]])
        g = ce.values
        return np.concatenate([H, fb(beta, -g), fb(beta_hat, -g), [fb(lam, 0.0)]])

    def evaluate(self, x) -> ResidualEval:
        q, m = self.q, self.m
        mq = m * q
        w, X, beta, beta_hat, lam, gb, ce = self._pieces(x)
        H = self._H(beta, beta_hat, lam, gb, ce)

        nw, nX = slice(0, q), slice(q, q + mq)
        J = np.zeros((self.n_residuals, self.n_unknowns))
        r1, r2, r3 = slice(0, q), slice(q, q + mq), slice(q + mq, q + 2 * mq)

        J[r1, nw] = gb.d2F_dww
        J[r1, nX] = gb.d2F_dwX
        J[r2, nw] = gb.d2F_dwX.T - lam * gb.d2f_dwX.T
        J[r2, nX] = gb.d2F_dXX - lam * gb.d2f_dXX
        J[r2, -1] = -gb.df_dX.ravel()
        J[r3, nw] = gb.d2f_dwX.T
        J[r3, nX] = gb.d2f_dXX

        fb_rows = q + 2 * mq
        if ce is None:
            phi = np.concatenate([H, [fb(lam, 0.0)]])
        else:
            g = ce.values
            Jg = ce.jacobian
            nb = slice(q + mq, q + mq + m)
            nbh = slice(q + mq + m, q + mq + 2 * m)
            for i in range(m):
                blk = slice(q + i * q, q + (i + 1) * q)
                J[q + i * q:q + (i + 1) * q, blk] -= beta[i] * ce.hessians[i]
                J[q + mq + i * q:q + mq + (i + 1) * q, blk] += beta_hat[i] * ce.hessians[i]
            J[r2, nb] = -Jg.T
            J[r3, nbh] = Jg.T

            # fb(zeta_t, -g_t): d/dzeta = da, d/dX = db * (-grad g_t)
            da, db = fb_newton_derivative(beta, -g)
            dah, dbh = fb_newton_derivative(beta_hat, -g)
            rows_b = np.arange(fb_rows, fb_rows + m)
            rows_bh = rows_b + m
            J[rows_b, q + mq + np.arange(m)] = da
            J[rows_bh, q + mq + m + np.arange(m)] = dah
            J[rows_b, nX] = -db[:, None] * Jg
            J[rows_bh, nX] = -dbh[:, None] * Jg
            phi = np.concatenate([H, fb(beta, -g), fb(beta_hat, -g), [fb(lam, 0.0)]])

        dl, _ = fb_newton_derivative(lam, 0.0)
        J[-1, -1] = dl
        merit = 0.5 * float(phi @ phi)
        return ResidualEval(phi=phi, newton_jacobian=J, merit=merit, grad_merit=J.T @ phi)

    def residual_and_jacobian(self, x):
        ev = self.evaluate(x)
        return ev.phi, ev.newton_jacobian


def assemble_H(pt: StationarityPoint, p: BilevelProblem):
    return StationaritySystem(p).assemble_H(pt.vector)


def assemble_phi(pt: StationarityPoint, p: BilevelProblem, constrained: bool = True) -> ResidualEval:
    system = StationaritySystem(p, constrained=constrained)
    return system.evaluate(system.pack(pt))


def multiple_optima_witness(w, p: BilevelProblem, X=None, margin=1e-6):
    """A second lower-level optimum with the same objective value.

    Mass is moved from coordinate k onto coordinate j of one adversary row so
    that ``w . X_i`` is preserved. Returns ``(X_star, X_prime, delta)`` where
    ``delta`` is a threshold making both matrices strictly feasible.
    """
    w = np.asarray(w, dtype=float)
    X_star = np.array(p.X if X is None else X, dtype=float)
    q = w.shape[0]
    if q < 2:
        raise PreconditionFailed("need q > 1")
    if np.any(w == 0.0):
        raise PreconditionFailed("every weight must be nonzero")
    rows = np.flatnonzero(np.any(X_star != 0.0, axis=1))
    if rows.size == 0:
        raise PreconditionFailed("X has no nonzero entry")

    from .constraints import row_cosines

    for i in rows:
        for k in np.argsort(-np.abs(X_star[i]), kind="stable"):
            if X_star[i, k] == 0.0:
                break
            for j in range(q):
                if j == k:
                    continue
                X_prime = X_star.copy()
                X_prime[i, j] = X_star[i, j] + (w[k] / w[j]) * X_star[i, k]
                X_prime[i, k] = 0.0
                if np.linalg.norm(X_prime[i]) == 0.0:
                    continue
                sims = np.concatenate([row_cosines(X_star, p.X0), row_cosines(X_prime, p.X0)])
                lo = float(np.min(sims))
                if lo <= -1.0 + margin:
                    continue
                delta = max(lo - margin, -1.0 + margin / 2)
                return X_star, X_prime, delta
    raise PreconditionFailed("no admissible coordinate pair found")
