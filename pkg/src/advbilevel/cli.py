"""Command line entry point: synth, train, evaluate, gridsearch, check-derivatives, props."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings

import numpy as np

from . import io
from .checks import check_derivatives, prop1_check, prop2_check
from .constraints import WitnessNotFound
from .lm import LMConfig
from .model import BilevelProblem, HyperParams, ProblemValidationError
from .pipeline import (
    ExperimentConfig,
    GridRow,
    Variant,
    WarmStart,
    chronological_split,
    evaluate_buckets,
    grid_search,
    select_adversary_seed,
    train_bilevel,
    train_classic,
)
from .stationarity import PreconditionFailed
from .synth import generate_synthetic_drift

log = logging.getLogger("advbilevel")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_PROPERTY = 0, 1, 2, 3

DEFAULTS = {
    "synth": dict(seed=0, n_train=200, n_test=400, q=8, drift=0.3, out=None),
    "train": dict(seed=0, data=None, variant="constrained", m=2, delta=0.99, rho="100",
                  train_size=200, buckets=4, warm_start="classic", out="model.txt",
                  trace=None, require_convergence=False, max_iter=2000, epsilon=1e-6),
    "evaluate": dict(data=None, model=None, train_size=200, buckets=4, out=None),
    "gridsearch": dict(seed=0, data=None, m="1,2,5,10", delta="0.9,0.99,0.999", starts=1,
                       variant="constrained", warm_start="classic", rho="100", train_size=200,
                       buckets=4, workers=1, out="results.csv", max_iter=2000, epsilon=1e-6),
    "check-derivatives": dict(seed=0, trials=100, tol=1e-5),
    "props": dict(seed=0, x0="-1,-1,-1", delta=-0.8, trials=50),
}

LIST_OPTIONS = ("--x0", "--m", "--delta")


class CLIError(Exception):
    def __init__(self, code, kind, message):
        self.code, self.kind = code, kind
        super().__init__(message)


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _rho(text):
    return None if str(text).lower() in ("none", "off", "disabled") else float(text)


def _bool(v):
    return v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")


def build_parser():
    parser = argparse.ArgumentParser(prog="advbilevel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key = value file; flags override it")
        return p

    p = add("synth", "generate a synthetic drifting corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--drift", type=float)
    p.add_argument("--out")

    p = add("train", "train one classifier and write a model file")
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--m", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--rho")
    p.add_argument("--train-size", type=int)
    p.add_argument("--buckets", type=int)
    p.add_argument("--warm-start", choices=[v.value for v in WarmStart])
    p.add_argument("--max-iter", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out")
    p.add_argument("--trace", help="write per-iteration records as JSON lines")
    p.add_argument("--require-convergence", action="store_true", default=None)

    p = add("evaluate", "per-bucket P4 of a saved model")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--train-size", type=int)
    p.add_argument("--buckets", type=int)
    p.add_argument("--out", help="tab separated per-bucket series")

    p = add("gridsearch", "grid search over adversary size and similarity threshold")
    p.add_argument("--data")
    p.add_argument("--seed", type=int)
    p.add_argument("--m", help="comma separated adversary sizes")
    p.add_argument("--delta", help="comma separated thresholds")
    p.add_argument("--starts", type=int)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--warm-start", choices=[v.value for v in WarmStart])
    p.add_argument("--rho")
    p.add_argument("--train-size", type=int)
    p.add_argument("--buckets", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out")

    p = add("check-derivatives", "finite-difference check of all derivative blocks")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--tol", type=float)

    p = add("props", "multiple-optima and non-convexity witnesses")
    p.add_argument("--seed", type=int)
    p.add_argument("--x0", help="comma separated origin row with equal entries")
    p.add_argument("--delta", type=float)
    p.add_argument("--trials", type=int)
    return parser


def _glue_list_values(argv):
    """Let list options take values starting with '-' (``--x0 -1,-1,-1``)."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in LIST_OPTIONS and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def resolve(args) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        file_cfg = io.read_config(args.config)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise CLIError(EXIT_INVALID, "ConfigError", f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise CLIError(EXIT_INVALID, "MissingArgument", f"missing required option(s): {missing}")


def _lm(cfg):
    return LMConfig(max_iter=int(cfg["max_iter"]), epsilon=float(cfg["epsilon"]))


def cmd_synth(cfg):
    _require(cfg, "out")
    data = generate_synthetic_drift(int(cfg["seed"]), int(cfg["n_train"]), int(cfg["n_test"]),
                                    int(cfg["q"]), float(cfg["drift"]))
    io.save_corpus(data, cfg["out"])
    print(f"wrote {data.n} rows x {data.q} features to {cfg['out']}")
    return EXIT_OK


def cmd_train(cfg):
    _require(cfg, "data", "out")
    data = io.load_corpus(cfg["data"])
    train, tests = chronological_split(data, int(cfg["train_size"]), int(cfg["buckets"]))
    rho = _rho(cfg["rho"])
    classic = train_classic(train, rho)
    variant = Variant(cfg["variant"])
    rows = []
    if variant is Variant.CLASSIC:
        clf = classic
    else:
        m = int(cfg["m"])
        seed = int(cfg["seed"])
        static, adv = select_adversary_seed(train, m, np.random.default_rng([seed, m, 0]))
        delta = float(cfg["delta"]) if variant is Variant.CONSTRAINED else 0.0
        problem = BilevelProblem(static, adv, HyperParams(delta, rho))
        w0 = classic.weights if WarmStart(cfg["warm_start"]) is WarmStart.CLASSIC else None
        trace_fh = open(cfg["trace"], "w") if cfg.get("trace") else None
        try:
            clf = train_bilevel(problem, variant, w0=w0, cfg=_lm(cfg),
                                rng=np.random.default_rng([seed, m, 0, 0, 1]),
                                trace=(lambda r: trace_fh.write(r.to_json() + "\n")) if trace_fh else None)
        finally:
            if trace_fh:
                trace_fh.close()
    rep = clf.solve_report
    scores = evaluate_buckets(clf.weights, tests)
    for b, v in enumerate(scores, start=1):
        rows.append(GridRow(variant.value, int(cfg["m"]) if rep else 0,
                            float(cfg["delta"]) if variant is Variant.CONSTRAINED else None, 0, b, v,
                            rep.residual_norm if rep else None, rep.iterations if rep else 0,
                            rep.termination.value if rep else "n/a", rep.wall_time if rep else 0.0))
    io.save_model(cfg["out"], clf.weights, str(clf.provenance), cfg)
    io.write_results(str(cfg["out"]) + ".results.csv", rows, cfg)
    summary = {"provenance": str(clf.provenance), "p4": scores}
    if rep:
        summary.update(termination=rep.termination.value, iterations=rep.iterations,
                       residual_norm=rep.residual_norm)
    print(json.dumps(summary))
    if rep and _bool(cfg["require_convergence"]) and not rep.converged:
        raise CLIError(EXIT_NONCONVERGED, "SolverNonConvergence",
                       f"solver ended with {rep.termination.value} at |phi|={rep.residual_norm:.3e}")
    return EXIT_OK


def cmd_evaluate(cfg):
    _require(cfg, "data", "model")
    data = io.load_corpus(cfg["data"])
    weights, provenance = io.load_model(cfg["model"])
    if weights.shape[0] != data.q:
        raise CLIError(EXIT_INVALID, "DimensionMismatch",
                       f"model has {weights.shape[0]} weights, data has {data.q} features")
    _, tests = chronological_split(data, int(cfg["train_size"]), int(cfg["buckets"]))
    scores = evaluate_buckets(weights, tests)
    series = [(b, v) for b, v in enumerate(scores, start=1)]
    if cfg.get("out"):
        io.write_series(cfg["out"], series, names=("bucket", provenance or "model"))
    print(json.dumps({"provenance": provenance, "p4": scores}))
    return EXIT_OK


def cmd_gridsearch(cfg):
    _require(cfg, "data", "out")
    data = io.load_corpus(cfg["data"])
    exp = ExperimentConfig(
        train_size=int(cfg["train_size"]), test_partitions=int(cfg["buckets"]),
        grid_m=_ints(cfg["m"]), grid_delta=_floats(cfg["delta"]), starts=int(cfg["starts"]),
        seed=int(cfg["seed"]), variant=cfg["variant"], warm_start=cfg["warm_start"],
        rho=_rho(cfg["rho"]), workers=int(cfg["workers"]), lm=_lm(cfg),
    )
    result = grid_search(data, exp)
    out = str(cfg["out"])
    stem = out[:-4] if out.endswith(".csv") else out
    io.write_results(out, result.rows, cfg)
    io.write_summary(stem + ".summary.csv", result.summaries, result.best)
    io.write_series(stem + ".series.tsv", result.series())
    n_cells = len(result.summaries)
    print(json.dumps({"cells": n_cells, "winner": list(result.best), "results": out}))
    return EXIT_OK


def cmd_check_derivatives(cfg):
    worst, failures = check_derivatives(int(cfg["trials"]), float(cfg["tol"]), int(cfg["seed"]))
    for block, err in worst.items():
        print(f"{block:10s} worst relative error {err:.3e}")
    if failures:
        raise CLIError(EXIT_PROPERTY, "DerivativeCheckFailed",
                       f"{len(failures)} block(s) exceed tol {cfg['tol']}, e.g. {failures[0]}")
    print(f"all blocks within {float(cfg['tol']):g} over {cfg['trials']} trials")
    return EXIT_OK


def cmd_props(cfg):
    x0 = np.array(_floats(cfg["x0"]))
    delta = float(cfg["delta"])
    try:
        (x_a, x_b, mid), g = prop2_check(x0, delta)
    except WitnessNotFound as exc:
        raise CLIError(EXIT_PROPERTY, "WitnessNotFound", str(exc)) from exc
    print("non-convexity witness")
    for name, v, gv in (("x_a", x_a, g[0]), ("x_b", x_b, g[1]), ("midpoint", mid, g[2])):
        print(f"  {name:9s} {np.array2string(v, precision=6)}  g={gv:+.6e}")

    rng = np.random.default_rng(int(cfg["seed"]))
    worst_gap, worst_g = 0.0, -np.inf
    for _ in range(int(cfg["trials"])):
        q, m = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        w = rng.choice([-1, 1], q) * rng.uniform(0.2, 2.0, q)
        X0 = rng.standard_normal((m, q))
        Xs = X0 + 0.3 * rng.standard_normal((m, q))
        p = BilevelProblem.from_arrays(rng.standard_normal((3, q)), [0, 1, 0], X0, X=Xs, delta=0.0)
        try:
            *_, gap, gmax = prop1_check(w, p)
        except PreconditionFailed as exc:
            raise CLIError(EXIT_PROPERTY, "PreconditionFailed", str(exc)) from exc
        worst_gap, worst_g = max(worst_gap, gap), max(worst_g, gmax)
    print(f"multiple-optima witness: max |f(X*) - f(X')| = {worst_gap:.3e}, max g = {worst_g:+.3e}")
    if not (worst_gap <= 1e-12 and worst_g < 0.0 and g[0] <= 0 and g[1] <= 0 and g[2] > 0):
        raise CLIError(EXIT_PROPERTY, "PropertyCheckFailed", "a witness check failed")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "gridsearch": cmd_gridsearch,
    "check-derivatives": cmd_check_derivatives,
    "props": cmd_props,
}


def main(argv=None) -> int:
    argv = _glue_list_values(list(sys.argv[1:] if argv is None else argv))
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        log.info("resolved config: %s", json.dumps(cfg, default=str))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg)
    except CLIError as exc:
        code, kind, msg = exc.code, exc.kind, str(exc)
    except (ProblemValidationError, io.ParseError, io.EmptyFile, ValueError, FileNotFoundError) as exc:
        code, kind, msg = EXIT_INVALID, type(exc).__name__, str(exc)
    print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
