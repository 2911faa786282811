"""Finite-difference verification of every analytic derivative block, and
executable checks of the two structural properties of the lower level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from .constraints import check_nonconvexity_witness, cosine_similarity, eval_constraints
from .model import BilevelProblem
from .stationarity import StationaritySystem, multiple_optima_witness

FD_STEP = 1e-6


def fd_gradient(fun, x, h=FD_STEP):
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g.reshape(x.shape)


def fd_jacobian(fun, x, h=FD_STEP):
    """Central differences of a vector function; rows index outputs."""
    x = np.asarray(x, dtype=float).ravel()
    cols = []
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        cols.append((np.ravel(fun(x + e)) - np.ravel(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=1)


def rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def random_instance(rng, q_max=5, m_max=4, n_max=8, any_labels=True):
    q = int(rng.integers(2, q_max + 1))
    m = int(rng.integers(1, m_max + 1))
    n = int(rng.integers(2, n_max + 1))
    return dict(
        w=rng.standard_normal(q),
        D=rng.standard_normal((n, q)),
        gamma=rng.integers(0, 2, n),
        X=rng.standard_normal((m, q)),
        X0=rng.standard_normal((m, q)),
        Y=rng.integers(0, 2, m) if any_labels else np.ones(m, dtype=int),
        rho=[None, 10.0][int(rng.integers(0, 2))],
        delta=float(rng.uniform(-0.9, 0.9)),
    )


@dataclass
class BlockCheck:
    trial: int
    block: str
    error: float


def derivative_errors(inst) -> dict:
    """Relative error of each analytic block against central differences.

    Gradients are differenced from objective values; second-derivative
    blocks from the (separately verified) analytic gradients.
    """
    w, D, gamma, X, Y, rho = (inst[k] for k in ("w", "D", "gamma", "X", "Y", "rho"))
    X0, delta = inst["X0"], inst["delta"]
    m, q = X.shape
    gb = losses.derivatives(w, D, gamma, X, Y, rho)

    F_w = lambda v: losses.upper_value(v, D, gamma, X, Y, rho)
    F_X = lambda v: losses.upper_value(w, D, gamma, v.reshape(m, q), Y, rho)
    f_w = lambda v: losses.lower_value(v, X, Y)
    f_X = lambda v: losses.lower_value(w, v.reshape(m, q), Y)

    def grads(wv, Xv):
        return losses.derivatives(wv, D, gamma, Xv.reshape(m, q), Y, rho)

    out = {
        "dF_dw": rel_error(gb.dF_dw, fd_gradient(F_w, w)),
        "dF_dX": rel_error(gb.dF_dX.ravel(), fd_gradient(F_X, X.ravel())),
        "df_dw": rel_error(gb.df_dw, fd_gradient(f_w, w)),
        "df_dX": rel_error(gb.df_dX.ravel(), fd_gradient(f_X, X.ravel())),
        "d2F_dww": rel_error(gb.d2F_dww, fd_jacobian(lambda v: grads(v, X).dF_dw, w)),
        "d2f_dww": rel_error(gb.d2f_dww, fd_jacobian(lambda v: grads(v, X).df_dw, w)),
        "d2F_dwX": rel_error(gb.d2F_dwX, fd_jacobian(lambda v: grads(w, v).dF_dw, X.ravel())),
        "d2f_dwX": rel_error(gb.d2f_dwX, fd_jacobian(lambda v: grads(w, v).df_dw, X.ravel())),
        "d2F_dXX": rel_error(gb.d2F_dXX, fd_jacobian(lambda v: grads(w, v).dF_dX.ravel(), X.ravel())),
        "d2f_dXX": rel_error(gb.d2f_dXX, fd_jacobian(lambda v: grads(w, v).df_dX.ravel(), X.ravel())),
    }

    ce = eval_constraints(X, X0, delta)
    g_of = lambda v: eval_constraints(v.reshape(m, q), X0, delta).values
    out["dg_dX"] = rel_error(ce.jacobian, fd_jacobian(g_of, X.ravel()))
    hess_err = 0.0
    for i in range(m):
        gi = lambda v, i=i: eval_constraints(v.reshape(1, q), X0[i:i + 1], delta).jacobian[0]
        hess_err = max(hess_err, rel_error(ce.hessians[i], fd_jacobian(gi, X[i])))
    out["d2g_dXX"] = hess_err
    return out


def check_derivatives(trials=100, tol=1e-5, seed=0):
    """Run ``trials`` random instances; return (worst error per block, failures)."""
    rng = np.random.default_rng(seed)
    worst, failures = {}, []
    for t in range(trials):
        for block, err in derivative_errors(random_instance(rng)).items():
            worst[block] = max(worst.get(block, 0.0), err)
            if not err <= tol:
                failures.append(BlockCheck(t, block, err))
    return worst, failures


def check_newton_jacobian(problem: BilevelProblem, x, constrained=True, h=FD_STEP):
    system = StationaritySystem(problem, constrained=constrained)
    J = system.evaluate(x).newton_jacobian
    return rel_error(J, fd_jacobian(system.residual, x, h))


def prop1_check(w, problem: BilevelProblem):
    """Return (|f(w, X*) - f(w, X')|, max g over both, delta used)."""
    X_star, X_prime, delta = multiple_optima_witness(w, problem)
    gap = abs(losses.lower_objective(w, problem, X_star) - losses.lower_objective(w, problem, X_prime))
    g_max = max(
        eval_constraints(X_star, problem.X0, delta).values.max(),
        eval_constraints(X_prime, problem.X0, delta).values.max(),
    )
    return X_star, X_prime, delta, gap, float(g_max)


def prop2_check(x0, delta):
    """Return the witness triple and the constraint values at each point."""
    x_a, x_b, mid = check_nonconvexity_witness(x0, delta)
    g = [delta - cosine_similarity(v, x0) for v in (x_a, x_b, mid)]
    return (x_a, x_b, mid), g
