import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advbilevel import LMConfig, StationaritySystem, Termination, lm_solve
from advbilevel.lm import damped_normal_solve
from advbilevel.stationarity import ResidualEval, fb, fb_newton_derivative

from test_stationarity import exact_zero_problem


class Smooth:
    def residual(self, x):
        return np.array([x[0] ** 2 - 1.0, x[1] - 2.0])

    def evaluate(self, x):
        phi = self.residual(x)
        J = np.array([[2 * x[0], 0.0], [0.0, 1.0]])
        return ResidualEval(phi, J, 0.5 * phi @ phi, J.T @ phi)


class ScalarComplementarity:
    """min x s.t. x >= 0: residuals (1 - mu, fb(mu, x)), unknowns (x, mu)."""

    def residual(self, z):
        return np.array([1.0 - z[1], fb(z[1], z[0])])

    def evaluate(self, z):
        phi = self.residual(z)
        da, db = fb_newton_derivative(z[1], z[0])
        J = np.array([[0.0, -1.0], [db, da]])
        return ResidualEval(phi, J, 0.5 * phi @ phi, J.T @ phi)


class Stagnating:
    def residual(self, x):
        return np.array([x[0], 1.0])

    def evaluate(self, x):
        phi = self.residual(x)
        J = np.array([[1.0], [0.0]])
        return ResidualEval(phi, J, 0.5 * phi @ phi, J.T @ phi)


def test_smooth_square_system():
    rep = lm_solve(Smooth(), np.array([3.0, 0.0]), LMConfig(epsilon=1e-10))
    assert rep.termination is Termination.CONVERGED
    assert rep.iterations < 50
    assert abs(abs(rep.final_x[0]) - 1.0) < 1e-9 and abs(rep.final_x[1] - 2.0) < 1e-9


def test_scalar_complementarity():
    rep = lm_solve(ScalarComplementarity(), np.array([2.0, 0.3]), LMConfig(epsilon=1e-10))
    assert rep.converged
    np.testing.assert_allclose(rep.final_x, [0.0, 1.0], atol=1e-9)


def test_stagnation_stop():
    K = 10
    rep = lm_solve(Stagnating(), np.array([1.0]), LMConfig(eta=0.99, K=K, max_iter=1000))
    assert rep.termination is Termination.STAGNATED
    assert K < rep.iterations <= K + 2


def test_max_iterations():
    rep = lm_solve(Smooth(), np.array([3.0, 0.0]), LMConfig(max_iter=1, epsilon=1e-14))
    assert rep.termination is Termination.MAX_ITERATIONS
    assert rep.iterations == 1


def test_report_invariants():
    rep = lm_solve(Smooth(), np.array([3.0, 0.0]))
    assert rep.residual_history and rep.residual_history[-1] < LMConfig().epsilon
    assert len(rep.residual_history) == rep.iterations + 1
    for a, b in rep.accepted_steps:
        assert b < a


def test_determinism():
    p, pt = exact_zero_problem()
    s = StationaritySystem(p)
    x0 = pt.vector + 0.3
    a, b = lm_solve(s, x0), lm_solve(s, x0)
    assert a.residual_history == b.residual_history
    assert np.array_equal(a.final_x, b.final_x)


def test_stationary_start_converges_immediately():
    p, pt = exact_zero_problem()
    s = StationaritySystem(p)
    rep = lm_solve(s, s.pack(pt))
    assert rep.converged and rep.iterations <= 2
    np.testing.assert_allclose(rep.final_point.w(p.q), pt.w(p.q), atol=1e-10)


def test_trace_records():
    records = []
    rep = lm_solve(Smooth(), np.array([3.0, 0.0]), trace=records.append)
    assert len(records) == rep.iterations
    assert records[0].iteration == 1 and records[0].step_type in {"lm", "lm-ls", "gradient"}
    assert '"residual_norm"' in records[0].to_json()


@pytest.mark.parametrize("field, value", [("kappa", 1.0), ("eta", 0.0), ("max_iter", 0),
                                           ("sigma", 1.5), ("gamma1", -1.0)])
def test_config_ranges(field, value):
    with pytest.raises(ValueError):
        LMConfig(**{field: value})


def test_inadmissible_start():
    p, pt = exact_zero_problem()
    s = StationaritySystem(p)
    x = s.pack(pt).copy()
    x[p.q:p.q + p.q] = 0.0
    with pytest.raises(ValueError):
        lm_solve(s, x)


def test_damped_solve_identity_limit():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(damped_normal_solve(np.eye(3), b, 1e-12), -b, atol=1e-10)


def test_damped_solve_large_damping():
    rng = np.random.default_rng(0)
    J, phi = rng.standard_normal((5, 3)), rng.standard_normal(5)
    v = 1e8
    np.testing.assert_allclose(damped_normal_solve(J, phi, v) * v, -J.T @ phi, rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 10.0))
def test_damped_solve_matches_ridge_lstsq(seed, v):
    rng = np.random.default_rng(seed)
    J = rng.standard_normal((20, 14))
    phi = rng.standard_normal(20)
    # independent oracle: augmented least squares [J; sqrt(v) I] d = [-phi; 0]
    A = np.vstack([J, np.sqrt(v) * np.eye(14)])
    rhs = np.concatenate([-phi, np.zeros(14)])
    d_ref = np.linalg.lstsq(A, rhs, rcond=None)[0]
    d = damped_normal_solve(J, phi, v)
    np.testing.assert_allclose(d, d_ref, rtol=1e-8, atol=1e-10)
    lhs = (J.T @ J + v * np.eye(14)) @ d
    assert np.linalg.norm(lhs + J.T @ phi) <= 1e-10 * max(1.0, np.linalg.norm(J.T @ phi))


def test_damped_solve_rejects_nonpositive_damping():
    with pytest.raises(ValueError):
        damped_normal_solve(np.eye(2), np.ones(2), 0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_merit_monotone_on_bilevel_solves(seed):
    from conftest import small_problem
    rng = np.random.default_rng(seed)
    p = small_problem(seed=seed % 1000, delta=0.8)
    s = StationaritySystem(p)
    x0 = np.concatenate([rng.standard_normal(p.q), p.X0.ravel(), rng.random(2 * p.m + 1)])
    rep = lm_solve(s, x0, LMConfig(max_iter=200))
    assert all(b < a for a, b in rep.accepted_steps)
    assert rep.termination is not Termination.NUMERICAL_BREAKDOWN


def test_damped_solve_survives_squared_conditioning():
    # entries ~1e9 make J^T J + v I fail to factor in double precision
    rng = np.random.default_rng(1)
    J = rng.standard_normal((6, 4))
    J[:, 0] *= 1e9
    J[:, 1] = J[:, 0] * (1 + 1e-12)
    phi = rng.standard_normal(6)
    d = damped_normal_solve(J, phi, 1.0)
    ref = np.linalg.lstsq(np.vstack([J, np.eye(4)]), np.concatenate([-phi, np.zeros(4)]), rcond=None)[0]
    assert np.all(np.isfinite(d))
    np.testing.assert_allclose(d, ref, rtol=1e-6, atol=1e-9)
