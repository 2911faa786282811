"""Global nonsmooth Levenberg-Marquardt for mixed complementarity systems.

The solver works on any system object with

* ``evaluate(x)`` returning something with ``phi`` and ``newton_jacobian``
* ``residual(x)`` returning ``phi`` only
* optionally ``is_admissible(x)`` rejecting points outside the domain.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lstsq


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    STAGNATED = "Stagnated"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILED = "LineSearchFailed"
    NUMERICAL_BREAKDOWN = "NumericalBreakdown"


class NumericalBreakdown(ArithmeticError):
    pass


@dataclass(frozen=True)
class LMConfig:
    kappa: float = 0.9
    epsilon: float = 1e-6
    sigma: float = 1e-4
    beta_ls: float = 0.5
    rho1: float = 1e-8
    rho2: float = 1e-8
    gamma1: float = 1.0
    gamma2: float = 1.0
    eta: float = 0.995
    K: int = 50
    max_iter: int = 2000
    max_backtracks: int = 60

    def __post_init__(self):
        for name in ("kappa", "sigma", "beta_ls", "eta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name}={v} must lie in (0, 1)")
        for name in ("epsilon", "rho1", "rho2", "gamma1", "gamma2"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.K < 0 or self.max_backtracks < 1:
            raise ValueError("max_iter and max_backtracks must be >= 1, K >= 0")


@dataclass
class IterationRecord:
    iteration: int
    residual_norm: float
    merit: float
    step_type: str
    step_norm: float

    def to_json(self):
        return json.dumps(asdict(self))


@dataclass
class SolveReport:
    final_x: np.ndarray
    residual_history: list
    termination: Termination
    iterations: int
    wall_time: float
    merit_history: list = field(default_factory=list)
    accepted_steps: list = field(default_factory=list)
    final_point: object = None

    @property
    def residual_norm(self) -> float:
        return self.residual_history[-1]

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED


def damped_normal_solve(J, phi, v):
    """Solve (J^T J + v I) d = -J^T phi by Cholesky with one refinement pass.

    If rounding makes the explicit normal matrix fail to factor (J with entries
    ~1e8 squares past double precision), the same equations are solved as the
    augmented least-squares problem [J; sqrt(v) I] d = [-phi; 0], which never
    forms J^T J.
    """
    if not v > 0.0:
        raise ValueError("damping must be positive")
    J = np.asarray(J, dtype=float)
    A = J.T @ J
    A[np.diag_indices_from(A)] += v
    rhs = -(J.T @ phi)
    try:
        factor = cho_factor(A, lower=True, check_finite=True)
        d = cho_solve(factor, rhs)
        d = d + cho_solve(factor, rhs - A @ d)
    except (LinAlgError, ValueError):
        d = _augmented_solve(J, phi, v)
    if not np.all(np.isfinite(d)):
        raise NumericalBreakdown("non-finite step")
    return d


def _augmented_solve(J, phi, v):
    n = J.shape[1]
    K = np.vstack([J, np.sqrt(v) * np.eye(n)])
    b = np.concatenate([-np.asarray(phi, dtype=float), np.zeros(n)])
    try:
        return lstsq(K, b, check_finite=True)[0]
    except (LinAlgError, ValueError) as exc:
        raise NumericalBreakdown(f"damped normal system not solvable: {exc}") from exc


def lm_solve(system, x0, cfg: Optional[LMConfig] = None, trace: Optional[Callable] = None) -> SolveReport:
    """Run the globalised LM iteration from ``x0``.

    ``trace`` receives an ``IterationRecord`` after every iteration.
    """
    cfg = cfg or LMConfig()
    t0 = time.perf_counter()
    admissible = getattr(system, "is_admissible", None) or (lambda x: bool(np.all(np.isfinite(x))))

    def merit_at(x):
        if not admissible(x):
            return np.inf
        r = system.residual(x)
        if not np.all(np.isfinite(r)):
            return np.inf
        return 0.5 * float(r @ r)

    x = np.array(x0, dtype=float)
    if not admissible(x):
        raise ValueError("start point is outside the admissible domain")
    norms, merits, accepted = [], [], []
    termination = Termination.MAX_ITERATIONS
    k = 0
    while True:
        ev = system.evaluate(x)
        phi, J = ev.phi, ev.newton_jacobian
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(J))):
            termination = Termination.NUMERICAL_BREAKDOWN
            break
        nrm = float(np.linalg.norm(phi))
        psi = 0.5 * nrm * nrm
        norms.append(nrm)
        merits.append(psi)
        if nrm < cfg.epsilon:
            termination = Termination.CONVERGED
            break
        if k > cfg.K and len(norms) > 1 and nrm / norms[-2] >= cfg.eta:
            termination = Termination.STAGNATED
            break
        if k >= cfg.max_iter:
            termination = Termination.MAX_ITERATIONS
            break

        grad = J.T @ phi
        v = min(cfg.gamma1, cfg.gamma2 * nrm)
        try:
            d = damped_normal_solve(J, phi, v)
        except NumericalBreakdown:
            termination = Termination.NUMERICAL_BREAKDOWN
            break

        trial = x + d
        psi_trial = merit_at(trial)
        if psi_trial <= cfg.kappa * psi:
            x, step_type, step_norm = trial, "lm", float(np.linalg.norm(d))
        else:
            gnorm = float(np.linalg.norm(grad))
            dnorm = float(np.linalg.norm(d))
            step_type = "lm-ls"
            if grad @ d > -cfg.rho1 * gnorm * dnorm or dnorm < cfg.rho2:
                d = -grad
                step_type = "gradient"
            slope = float(grad @ d)
            if not slope < 0.0:
                termination = Termination.LINE_SEARCH_FAILED
                break
            alpha = 1.0
            for _ in range(cfg.max_backtracks):
                alpha *= cfg.beta_ls
                psi_trial = merit_at(x + alpha * d)
                if psi_trial <= psi + alpha * cfg.sigma * slope and psi_trial < psi:
                    break
            else:
                termination = Termination.LINE_SEARCH_FAILED
                break
            x = x + alpha * d
            step_norm = alpha * float(np.linalg.norm(d))

        accepted.append((psi, psi_trial))
        k += 1
        if trace is not None:
            trace(IterationRecord(k, nrm, psi, step_type, step_norm))

    report = SolveReport(
        final_x=x,
        residual_history=norms,
        termination=termination,
        iterations=k,
        wall_time=time.perf_counter() - t0,
        merit_history=merits,
        accepted_steps=accepted,
    )
    unpack = getattr(system, "unpack", None)
    if unpack is not None:
        report.final_point = unpack(x)
    return report
