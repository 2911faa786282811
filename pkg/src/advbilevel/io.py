"""Corpus, model, results and config files (plain comma/tab separated text)."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .model import Dataset, ProblemValidationError

MODEL_HEADER = "# advbilevel-model v1"


class ParseError(ValueError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class EmptyFile(ValueError):
    pass


def load_corpus(path) -> Dataset:
    """Read ``timestamp,label,<q features>`` rows under a mandatory header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path} is empty")
        if len(header) < 3:
            raise ParseError(1, "header needs timestamp, label and at least one feature column")
        q = len(header) - 2
        ts, labels, feats = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != q + 2:
                raise ParseError(lineno, f"expected {q + 2} fields, found {len(row)}")
            try:
                t = int(row[0])
            except ValueError:
                raise ParseError(lineno, f"timestamp {row[0]!r} is not an integer") from None
            if row[1].strip() not in ("0", "1"):
                raise ParseError(lineno, f"label {row[1]!r} is not 0 or 1")
            try:
                x = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(lineno, f"bad feature value: {exc}") from None
            if not all(math.isfinite(v) for v in x):
                raise ParseError(lineno, "non-finite feature value")
            ts.append(t)
            labels.append(int(row[1]))
            feats.append(x)
    if not feats:
        raise EmptyFile(f"{path} has a header but no rows")
    try:
        return Dataset(np.array(feats), np.array(labels), np.array(ts))
    except ProblemValidationError as exc:
        raise ParseError(0, str(exc)) from exc


def save_corpus(data: Dataset, path):
    ts = data.timestamps if data.timestamps is not None else np.arange(data.n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "label"] + [f"f{k}" for k in range(data.q)])
        for t, y, x in zip(ts, data.labels, data.features):
            w.writerow([int(t), int(y)] + [repr(float(v)) for v in x])


def save_model(path, weights, provenance="", config=None):
    lines = [MODEL_HEADER, f"# provenance: {provenance}"]
    lines += [f"# {k}={v}" for k, v in (config or {}).items()]
    lines += [repr(float(v)) for v in np.ravel(weights)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    """Return (weights, provenance)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MODEL_HEADER:
        raise ParseError(1, f"missing model header {MODEL_HEADER!r}")
    provenance, weights = "", []
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# provenance:"):
                provenance = line.split(":", 1)[1].strip()
            continue
        try:
            weights.append(float(line))
        except ValueError:
            raise ParseError(lineno, f"bad weight {line!r}") from None
    if not weights:
        raise EmptyFile(f"{path} contains no weights")
    return np.array(weights), provenance


def read_config(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, "expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


RESULT_COLUMNS = ("variant", "m", "delta", "start", "bucket", "p4", "residual_norm",
                  "iterations", "termination", "wall_time")


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(path, rows, config=None):
    """One row per (variant, m, delta, start, bucket); resolved config as '#' lines."""
    keys = [r.key for r in rows]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate result keys")
    with open(path, "w", newline="") as fh:
        for k, v in (config or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])


def read_results(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_summary(path, summaries, best=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "m", "delta", "starts", "median", "p05", "p95", "winner"])
        for s in summaries:
            win = best is not None and (s.variant, s.m, s.delta) == best[:3]
            w.writerow([s.variant, s.m, _fmt(s.delta), len(s.mean_p4), _fmt(s.median),
                        _fmt(s.p05), _fmt(s.p95), int(win)])


def write_series(path, series, names=("bucket", "classic", "selected")):
    """Plot-ready per-bucket P4 columns, tab separated."""
    with open(path, "w") as fh:
        fh.write("\t".join(names) + "\n")
        for row in series:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")
