"""Chronological splitting, baseline and bilevel training, and the (m, delta) grid search."""

from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import losses
from .constraints import row_cosines
from .lm import LMConfig, SolveReport, lm_solve
from .metrics import confusion, mean_defined, p4
from .model import ZERO_NORM, AdversarySample, BilevelProblem, Dataset, HyperParams
from .stationarity import StationarityPoint, StationaritySystem


class InsufficientData(ValueError):
    pass


class NotEnoughMaliciousRows(ValueError):
    pass


class SingleClassData(ValueError):
    pass


class Variant(str, enum.Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"
    CLASSIC = "classic"


class WarmStart(str, enum.Enum):
    CLASSIC = "classic"
    RANDOM = "random"


@dataclass(frozen=True)
class ExperimentConfig:
    train_size: int = 200
    test_partitions: int = 4
    grid_m: Sequence[int] = (1, 2, 5, 10)
    grid_delta: Sequence[float] = (0.9, 0.99, 0.999)
    starts: int = 1
    seed: int = 0
    variant: Variant = Variant.CONSTRAINED
    warm_start: WarmStart = WarmStart.CLASSIC
    rho: Optional[float] = 100.0
    normalize: bool = True
    workers: int = 1
    lm: LMConfig = field(default_factory=LMConfig)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "warm_start", WarmStart(self.warm_start))
        object.__setattr__(self, "grid_m", tuple(int(m) for m in self.grid_m))
        object.__setattr__(self, "grid_delta", tuple(float(d) for d in self.grid_delta))
        if self.starts < 1:
            raise ValueError("starts must be >= 1")
        if self.train_size < 1 or self.test_partitions < 1:
            raise ValueError("train_size and test_partitions must be >= 1")
        if any(m < 1 for m in self.grid_m):
            raise ValueError("adversary sizes must be positive")
        if any(not -1.0 < d < 1.0 for d in self.grid_delta):
            raise ValueError("every delta must lie in (-1, 1)")


@dataclass(frozen=True)
class Provenance:
    kind: str
    m: Optional[int] = None
    delta: Optional[float] = None

    def __str__(self):
        if self.kind == "classic":
            return "Classic"
        if self.kind == "constrained":
            return f"BilevelConstrained(m={self.m}, delta={self.delta})"
        return f"BilevelUnconstrained(m={self.m})"


@dataclass
class TrainedClassifier:
    weights: np.ndarray
    provenance: Provenance
    solve_report: Optional[SolveReport] = None
    adversary_final: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.provenance.kind != "classic" and self.solve_report is None:
            raise ValueError("bilevel classifiers must carry their solve report")


# -- splitting ---------------------------------------------------------------

def chronological_split(data: Dataset, train_size: int, test_partitions: int):
    """Earliest ``train_size`` rows for training; the rest in K contiguous buckets.

    Ties in timestamps keep the original row order.
    """
    if data.timestamps is None:
        raise InsufficientData("data has no timestamps")
    rest = data.n - train_size
    if train_size < 1 or rest < test_partitions:
        raise InsufficientData(
            f"{data.n} rows cannot give {train_size} training rows and {test_partitions} test buckets"
        )
    order = np.argsort(data.timestamps, kind="stable")
    train = data.subset(order[:train_size])
    tests = [data.subset(idx) for idx in np.array_split(order[train_size:], test_partitions)]
    return train, tests


def select_adversary_seed(train: Dataset, m: int, rng: np.random.Generator):
    """Move ``m`` uniformly drawn nonzero malicious rows out of ``train`` into X0."""
    norms = np.linalg.norm(train.features, axis=1)
    candidates = np.flatnonzero((train.labels == 1) & (norms >= ZERO_NORM))
    if candidates.size < m:
        raise NotEnoughMaliciousRows(f"need {m} nonzero malicious rows, found {candidates.size}")
    picked = rng.choice(candidates, size=m, replace=False)
    keep = np.setdiff1d(np.arange(train.n), picked)
    assert np.intersect1d(keep, picked).size == 0
    assert keep.size + picked.size == train.n
    static = train.subset(keep)
    X0 = train.features[picked]
    return static, AdversarySample(X0, X0, np.ones(m, dtype=np.int64))


# -- training ----------------------------------------------------------------

def train_classic(train: Dataset, rho: Optional[float] = 100.0, normalize: bool = True,
                  gtol: float = 1e-6, max_iter: int = 100_000) -> TrainedClassifier:
    """Logistic regression on the static data alone (no adversary), via L-BFGS."""
    if np.unique(train.labels).size < 2:
        raise SingleClassData("training data contains a single class")
    X, y = train.features, train.labels.astype(float)
    scale = 1.0 / train.n if normalize else 1.0

    def fun(w):
        s = losses.sigmoid(w, X)
        val = scale * np.sum(losses.learner_loss(s, y))
        grad = scale * (X.T @ (s - y))
        if rho is not None:
            val += w @ w / rho
            grad = grad + 2.0 * w / rho
        return val, grad

    res = minimize(fun, np.zeros(train.q), jac=True, method="L-BFGS-B",
                   options={"gtol": gtol, "maxiter": max_iter, "maxfun": 2 * max_iter, "ftol": 0.0})
    return TrainedClassifier(np.asarray(res.x), Provenance("classic"))


def start_point(problem: BilevelProblem, variant: Variant, w0, rng: np.random.Generator):
    m = problem.m
    n_mult = 2 * m + 1 if variant is Variant.CONSTRAINED else 1
    zeta = rng.uniform(0.0, 1.0, size=n_mult)
    return StationarityPoint(np.concatenate([w0, problem.X0.ravel()]), zeta)


def train_bilevel(problem: BilevelProblem, variant=Variant.CONSTRAINED, w0=None,
                  cfg: Optional[LMConfig] = None, rng: Optional[np.random.Generator] = None,
                  start: Optional[StationarityPoint] = None, trace=None) -> TrainedClassifier:
    """Solve the stationarity system from X = X0 and return the learner's weights.

    ``w0`` is the warm start (e.g. classic weights); a standard normal draw
    from ``rng`` is used when it is None. Multipliers start uniform on [0, 1).
    """
    variant = Variant(variant)
    if variant is Variant.CLASSIC:
        raise ValueError("use train_classic for the classic variant")
    rng = rng if rng is not None else np.random.default_rng(0)
    if w0 is None:
        w0 = rng.standard_normal(problem.q)
    system = StationaritySystem(problem, constrained=variant is Variant.CONSTRAINED)
    if start is None:
        start = start_point(problem, variant, np.asarray(w0, dtype=float), rng)
    report = lm_solve(system, system.pack(start), cfg, trace=trace)
    w, X, *_ = system.split(report.final_x)
    if variant is Variant.CONSTRAINED:
        prov = Provenance("constrained", problem.m, problem.delta)
    else:
        prov = Provenance("unconstrained", problem.m)
    return TrainedClassifier(w.copy(), prov, report, X.copy())


def evaluate_buckets(weights, tests):
    return [p4(confusion(weights, t)) for t in tests]


# -- grid search -------------------------------------------------------------

@dataclass
class GridRow:
    variant: str
    m: int
    delta: Optional[float]
    start: int
    bucket: int
    p4: Optional[float]
    residual_norm: Optional[float]
    iterations: int
    termination: str
    wall_time: float

    @property
    def key(self):
        return (self.variant, self.m, self.delta, self.start, self.bucket)


@dataclass
class CellSummary:
    variant: str
    m: int
    delta: Optional[float]
    mean_p4: list
    median: Optional[float]
    p05: Optional[float]
    p95: Optional[float]


@dataclass
class GridResult:
    rows: list
    summaries: list
    best: tuple
    best_classifier: TrainedClassifier
    classic: TrainedClassifier
    classifiers: dict

    def series(self):
        """Per-bucket P4 for the classic baseline and the selected classifier."""
        K = max(r.bucket for r in self.rows)
        by_key = {r.key: r.p4 for r in self.rows}
        v, m, d, s = self.best
        return [
            (b, by_key[("classic", 0, None, 0, b)], by_key[(v, m, d, s, b)])
            for b in range(1, K + 1)
        ]


def _cell_rngs(seed, m, delta_idx, start):
    adv_rng = np.random.default_rng([seed, m, start])
    solve_rng = np.random.default_rng([seed, m, delta_idx, start, 1])
    return adv_rng, solve_rng


def _run_cell(args):
    train, tests, cfg, w_classic, variant, m, delta_idx, delta, start = args
    adv_rng, solve_rng = _cell_rngs(cfg.seed, m, delta_idx, start)
    static, adv = select_adversary_seed(train, m, adv_rng)
    params = HyperParams(delta if delta is not None else 0.0, cfg.rho, cfg.normalize)
    problem = BilevelProblem(static, adv, params)
    w0 = w_classic if cfg.warm_start is WarmStart.CLASSIC else None
    clf = train_bilevel(problem, variant, w0=w0, cfg=cfg.lm, rng=solve_rng)
    return (variant.value, m, delta, start), clf, evaluate_buckets(clf.weights, tests)


def grid_search(data: Dataset, cfg: ExperimentConfig) -> GridResult:
    train, tests = chronological_split(data, cfg.train_size, cfg.test_partitions)
    classic = train_classic(train, cfg.rho, cfg.normalize)

    rows = [
        GridRow("classic", 0, None, 0, b + 1, v, None, 0, "n/a", 0.0)
        for b, v in enumerate(evaluate_buckets(classic.weights, tests))
    ]
    tasks = []
    if cfg.variant is not Variant.CLASSIC:
        deltas = list(enumerate(cfg.grid_delta)) if cfg.variant is Variant.CONSTRAINED else [(0, None)]
        for m in cfg.grid_m:
            for di, delta in deltas:
                for s in range(cfg.starts):
                    tasks.append((train, tests, cfg, classic.weights, cfg.variant, m, di, delta, s))

    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]
    results.sort(key=lambda r: (r[0][1], -(r[0][2] or 0.0), r[0][3]))

    classifiers = {}
    for key, clf, scores in results:
        classifiers[key] = clf
        rep = clf.solve_report
        for b, v in enumerate(scores):
            rows.append(GridRow(key[0], key[1], key[2], key[3], b + 1, v, rep.residual_norm,
                                rep.iterations, rep.termination.value, rep.wall_time))

    summaries = summarize(rows)
    if results:
        means = {k: mean_defined([r.p4 for r in rows if r.key[:4] == k]) for k in classifiers}
        best = select_best(means)
        best_clf = classifiers[best]
    else:
        best, best_clf = ("classic", 0, None, 0), classic
    return GridResult(rows, summaries, best, best_clf, classic, classifiers)


def select_best(means: dict) -> tuple:
    """Highest mean P4; ties go to smaller m, then larger delta, then lower start."""
    def rank(item):
        (variant, m, delta, start), score = item
        return (-(score if score is not None else -np.inf), m, -(delta if delta is not None else 0.0), start)

    return min(means.items(), key=rank)[0]


def summarize(rows) -> list:
    """Median and 5%/95% percentiles of the across-bucket mean P4, per grid cell."""
    cells = {}
    for r in rows:
        if r.variant == "classic":
            continue
        cells.setdefault((r.variant, r.m, r.delta), {}).setdefault(r.start, []).append(r.p4)
    out = []
    for (variant, m, delta), starts in cells.items():
        means = [mean_defined(v) for _, v in sorted(starts.items())]
        defined = [v for v in means if v is not None]
        if defined:
            med, lo, hi = (float(x) for x in np.percentile(defined, [50, 5, 95]))
        else:
            med = lo = hi = None
        out.append(CellSummary(variant, m, delta, means, med, lo, hi))
    return out


def final_similarities(clf: TrainedClassifier, problem: BilevelProblem):
    return row_cosines(clf.adversary_final, problem.X0)
