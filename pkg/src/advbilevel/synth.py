"""Desk-scale synthetic data whose malicious class drifts toward the benign class.

Rows mimic sentence embeddings: every row shares a dominant common direction
and the classes differ by small angular offsets, so cosine thresholds in
[0.9, 0.999] are meaningful movement budgets.
"""

from __future__ import annotations

import numpy as np

from .model import Dataset

MALICIOUS_FRACTION = 0.4
CLASS_OFFSET = 0.3
NOISE = 0.12
COS_FLOOR = 0.95


def _unit(v):
    return v / np.linalg.norm(v)


def _orthonormal(rng, q, k):
    Q, _ = np.linalg.qr(rng.standard_normal((q, k)))
    return Q.T


def generate_synthetic_drift(seed: int, n_train: int, n_test: int, q: int,
                             drift_strength: float) -> Dataset:
    """Timestamped two-class data; timestamps are 0..n_train+n_test-1.

    Both class means are ``common + CLASS_OFFSET * offset_c``. A malicious row
    at time t is drawn around the malicious mean and then pulled toward the
    benign mean by ``drift_strength * (t - n_train) / n_test`` of the gap
    (zero during training, capped at the full gap), halving the pull until it
    stays within cosine ``COS_FLOOR`` of its pre-drift vector.
    """
    if n_train < 1 or n_test < 1 or q < 3:
        raise ValueError("need n_train, n_test >= 1 and q >= 3")
    if drift_strength < 0:
        raise ValueError("drift_strength must be nonnegative")
    rng = np.random.default_rng(seed)
    common, off_b, off_m = _orthonormal(rng, q, 3)
    benign = common + CLASS_OFFSET * off_b
    malicious = common + CLASS_OFFSET * off_m

    N = n_train + n_test
    t = np.arange(N)
    labels = (rng.uniform(size=N) < MALICIOUS_FRACTION).astype(np.int64)
    labels[:2] = (0, 1)
    noise = NOISE * rng.standard_normal((N, q)) / np.sqrt(q)
    scale = rng.uniform(0.8, 1.2, size=N)[:, None]
    feats = np.where(labels[:, None] == 1, malicious, benign) + noise

    progress = np.clip((t - n_train) / n_test, 0.0, None) * drift_strength
    shift = benign - malicious
    for i in np.flatnonzero((labels == 1) & (progress > 0)):
        pre = feats[i]
        s = min(progress[i], 1.0)
        for _ in range(60):
            moved = pre + s * shift
            if moved @ pre / (np.linalg.norm(moved) * np.linalg.norm(pre)) >= COS_FLOOR:
                break
            s *= 0.5
        else:
            moved = pre
        feats[i] = moved
    return Dataset(feats * scale, labels, t)
