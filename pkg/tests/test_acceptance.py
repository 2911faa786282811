"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the pytest terminal summary);
``python tests/test_acceptance.py`` runs them standalone and prints the lines.
"""

import time
import warnings

import numpy as np
import pytest

from advbilevel import cli
from advbilevel.checks import check_derivatives, prop1_check, prop2_check
from advbilevel.lm import LMConfig, Termination, lm_solve
from advbilevel.metrics import ConfusionCounts, mean_defined, p4
from advbilevel.model import BilevelProblem, HyperParams
from advbilevel.pipeline import (ExperimentConfig, chronological_split, evaluate_buckets,
                                 grid_search, select_adversary_seed, train_bilevel)
from advbilevel.stationarity import ResidualEval, fb
from advbilevel.synth import generate_synthetic_drift

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # standalone run
    ACCEPTANCE_LINES = {}

# (psi_before, psi_after) of every accepted step of every solve in this module.
ACCEPTED_STEPS = []


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


def _solve(system, x0, cfg=None):
    rep = lm_solve(system, x0, cfg)
    ACCEPTED_STEPS.extend(rep.accepted_steps)
    return rep


# -- toy residual systems ------------------------------------------------------

class MixedNCP:
    """KKT system of min 1/2 x'Qx + c'x s.t. x_i >= 0 for i in ``bounded``.

    Unknowns (x, mu); residuals (Qx + c - E mu, fb(mu, x_B)). The solution is
    planted: x*_B has zeros where mu* > 0, and c is set from stationarity.
    """

    def __init__(self, rng):
        self.n = n = int(rng.integers(3, 7))
        A = rng.standard_normal((n, n))
        self.Q = A @ A.T + 0.5 * np.eye(n)
        self.bounded = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        b = len(self.bounded)
        self.E = np.zeros((n, b))
        self.E[self.bounded, np.arange(b)] = 1.0
        x = rng.standard_normal(n)
        mu = np.zeros(b)
        active = rng.random(b) < 0.5
        x[self.bounded[active]] = 0.0
        x[self.bounded[~active]] = np.abs(x[self.bounded[~active]]) + 0.1
        mu[active] = rng.uniform(0.1, 2.0, active.sum())
        self.c = self.E @ mu - self.Q @ x
        self.solution = np.concatenate([x, mu])

    def residual(self, z):
        x, mu = z[: self.n], z[self.n:]
        return np.concatenate([self.Q @ x + self.c - self.E @ mu, fb(mu, x[self.bounded])])

    def evaluate(self, z):
        x, mu = z[: self.n], z[self.n:]
        a, bb = mu, x[self.bounded]
        r = np.hypot(a, bb)
        safe = np.where(r > 0, r, 1.0)
        da = np.where(r > 0, a / safe - 1.0, np.sqrt(0.5) - 1.0)
        db = np.where(r > 0, bb / safe - 1.0, np.sqrt(0.5) - 1.0)
        nb = len(self.bounded)
        J = np.zeros((self.n + nb, self.n + nb))
        J[: self.n, : self.n] = self.Q
        J[: self.n, self.n:] = -self.E
        J[self.n + np.arange(nb), self.n + np.arange(nb)] = da
        J[self.n + np.arange(nb), self.bounded] = db
        phi = self.residual(z)
        return ResidualEval(phi, J, 0.5 * float(phi @ phi), J.T @ phi)


class Stagnating:
    """Phi(x) = (x, 1): the residual norm is bounded below by 1."""

    def residual(self, x):
        return np.array([x[0], 1.0])

    def evaluate(self, x):
        phi = self.residual(x)
        J = np.array([[1.0], [0.0]])
        return ResidualEval(phi, J, 0.5 * float(phi @ phi), J.T @ phi)


# -- criteria ------------------------------------------------------------------

def test_c01_derivatives():
    t0 = time.perf_counter()
    worst, failures = check_derivatives(trials=100, tol=1e-5, seed=0)
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 30.0
    assert record(1, ok, f"worst rel. error {max(worst.values()):.2e} over 12 blocks, "
                         f"100 instances, {elapsed:.1f}s"), failures[:3]


def test_c02_fb_equivalence():
    grid = np.linspace(-5.0, 5.0, 101)  # 10201 points, includes both axes and the origin
    A, B = np.meshgrid(grid, grid)
    val = fb(A, B)
    zero = np.abs(val) <= 1e-12
    in_set = (A >= 0) & (B >= 0) & (np.abs(A * B) <= 1e-12)
    mismatches = int(np.sum(zero != in_set))
    assert record(2, mismatches == 0 and np.all(np.isfinite(val)),
                  f"{A.size} grid points, {mismatches} mismatches"), mismatches


def test_c03_multiple_optima_witness():
    rng = np.random.default_rng(3)
    worst_gap, worst_g = 0.0, -np.inf
    for _ in range(50):
        q, m = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        w = rng.choice([-1.0, 1.0], q) * rng.uniform(0.1, 3.0, q)
        Xs = rng.choice([-1.0, 1.0], (m, q)) * rng.uniform(0.1, 3.0, (m, q))
        X0 = Xs + 0.5 * rng.standard_normal((m, q))
        p = BilevelProblem.from_arrays(rng.standard_normal((3, q)), [0, 1, 1], X0, X=Xs, delta=0.0)
        _, _, _, gap, gmax = prop1_check(w, p)
        worst_gap, worst_g = max(worst_gap, gap), max(worst_g, gmax)
    ok = worst_gap <= 1e-12 and worst_g <= 0.0
    assert record(3, ok, f"50 instances, max |f(X*)-f(X')| = {worst_gap:.1e}, max g = {worst_g:.1e}")


def test_c04_nonconvexity_witness():
    (xa, xb, mid), g = prop2_check(np.array([-1.0, -1.0, -1.0]), -0.8)
    ok = g[0] <= 0 and g[1] <= 0 and g[2] >= 1e-6
    assert record(4, ok, f"g(x_a)={g[0]:.1e}, g(x_b)={g[1]:.1e}, g(midpoint)={g[2]:.3f}")


def test_c05_solver_convergence():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sys_ = MixedNCP(rng)
        x0 = sys_.solution + rng.standard_normal(sys_.solution.size)
        rep = _solve(sys_, x0, LMConfig(epsilon=1e-6, max_iter=500))
        hits += rep.residual_norm < 1e-6 and rep.iterations <= 500
    K = 10
    stag = _solve(Stagnating(), np.array([1.0]), LMConfig(eta=0.99, K=K, max_iter=1000))
    stag_ok = stag.termination is Termination.STAGNATED and stag.iterations <= K + 2
    ok = hits >= 19 and stag_ok
    assert record(5, ok, f"{hits}/20 toy NCPs solved to 1e-6; stagnation stop "
                         f"{stag.termination.value} after {stag.iterations} iterations"), (hits, stag)


def _c07_run():
    t0 = time.perf_counter()
    wins, margins = 0, []
    for seed in range(10):
        data = generate_synthetic_drift(seed, 200, 400, 8, 0.3)
        res = grid_search(data, ExperimentConfig(grid_m=(2,), grid_delta=(0.99,), seed=seed))
        for key, clf in res.classifiers.items():
            ACCEPTED_STEPS.extend(clf.solve_report.accepted_steps)
        _, classic_last, bilevel_last = res.series()[-1]
        margins.append((bilevel_last or 0.0) - (classic_last or 0.0))
        wins += margins[-1] > 0
    return wins, margins, time.perf_counter() - t0


def test_c07_synthetic_drift():
    wins, margins, elapsed = _c07_run()
    ok = wins >= 7 and elapsed < 600
    assert record(7, ok, f"bilevel beats classic on last bucket in {wins}/10 seeds "
                         f"(median margin {np.median(margins):+.3f}), {elapsed:.1f}s"), margins


def _iqr(v):
    q1, q3 = np.percentile(v, [25, 75])
    return float(q3 - q1)


def test_c08_consistency():
    reps, detail = 0, []
    for rep in range(5):
        data = generate_synthetic_drift(100 + rep, 200, 400, 8, 0.3)
        train, tests = chronological_split(data, 200, 4)
        static, adv = select_adversary_seed(train, 2, np.random.default_rng(rep))
        iqr = {}
        for variant, delta in (("constrained", 0.999), ("unconstrained", 0.0)):
            problem = BilevelProblem(static, adv, HyperParams(delta, 100.0))
            scores = []
            for s in range(20):
                clf = train_bilevel(problem, variant, w0=None, rng=np.random.default_rng([rep, s]))
                ACCEPTED_STEPS.extend(clf.solve_report.accepted_steps)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    scores.append(mean_defined(evaluate_buckets(clf.weights, tests)))
            iqr[variant] = _iqr([v if v is not None else 0.0 for v in scores])
        reps += iqr["constrained"] <= iqr["unconstrained"]
        detail.append(f"{iqr['constrained']:.2f}/{iqr['unconstrained']:.2f}")
    assert record(8, reps >= 4, f"constrained IQR <= unconstrained IQR in {reps}/5 repetitions "
                                f"(constrained/unconstrained: {', '.join(detail)})"), detail


def test_c09_grid_protocol(tmp_path):
    corpus = tmp_path / "corpus.csv"
    assert cli.main(["synth", "--seed", "4", "--out", str(corpus)]) == 0
    outs = []
    for i, workers in enumerate((1, 1, 3)):
        out = tmp_path / f"r{i}.csv"
        code = cli.main(["gridsearch", "--data", str(corpus), "--m", "1,2,5,10",
                         "--delta", "0.9,0.99,0.999", "--starts", "1",
                         "--workers", str(workers), "--out", str(out)])
        assert code == 0
        outs.append(((tmp_path / f"r{i}.summary.csv").read_text(),))
    lines = outs[0][0].strip().splitlines()
    header, cells = lines[0].split(","), [ln.split(",") for ln in lines[1:]]
    winners = [c for c in cells if c[-1] == "1"]
    summaries_ok = all(c[header.index("median")] != "NA" and c[header.index("p05")] != "NA"
                       and c[header.index("p95")] != "NA" for c in cells)
    deterministic = all(o == outs[0] for o in outs)
    ok = len(cells) == 12 and len(winners) == 1 and summaries_ok and deterministic
    assert record(9, ok, f"{len(cells)} cells, winner m={winners[0][1]} delta={winners[0][2]}, "
                         f"identical across 3 runs (1, 1, 3 workers): {deterministic}")


def test_c10_p4():
    sym = mono = rng_ok = True
    R = range(21)
    for tp in R:
        for tn in R:
            for fp in R:
                for fn in R:
                    v = p4(ConfusionCounts(tp, tn, fp, fn))
                    if v != p4(ConfusionCounts(tn, tp, fn, fp)):
                        sym = False
                    if v is not None and not 0.0 <= v <= 1.0:
                        rng_ok = False
                    if tn > 0 and tp < 20:
                        nxt = p4(ConfusionCounts(tp + 1, tn, fp, fn))
                        if v is not None and nxt is not None and nxt < v:
                            mono = False
    examples = (p4(ConfusionCounts(7, 3, 0, 0)) == 1.0
                and p4(ConfusionCounts(5, 5, 5, 5)) == 0.5
                and p4(ConfusionCounts(0, 10, 0, 5)) == 0.0)
    ok = sym and mono and rng_ok and examples
    assert record(10, ok, f"symmetry {sym}, monotonicity {mono}, range {rng_ok} over 21^4 counts; "
                          f"worked examples {examples}")


def test_c06_merit_monotone():
    # Runs last within the module so it sees every solve above.
    if not ACCEPTED_STEPS:
        pytest.skip("no solves recorded; run the whole module")
    bad = [(a, b) for a, b in ACCEPTED_STEPS if not b < a]
    assert record(6, not bad, f"{len(ACCEPTED_STEPS)} accepted steps, {len(bad)} without strict decrease"), bad[:3]


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c") and name != "test_c06_merit_monotone":
            try:
                fn(Path(tempfile.mkdtemp())) if "tmp_path" in fn.__code__.co_varnames else fn()
            except AssertionError:
                failed += 1
    try:
        test_c06_merit_monotone()
    except AssertionError:
        failed += 1
    sys.exit(1 if failed else 0)
