"""Problem data: datasets, the adversary's sample, hyperparameters and validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ZERO_NORM = 1e-300


class ValidationIssue(ValueError):
    """Base class for a single violated invariant."""


class ZeroOriginRow(ValidationIssue):
    pass


class DimensionMismatch(ValidationIssue):
    pass


class DeltaOutOfRange(ValidationIssue):
    pass


class InvalidLabels(ValidationIssue):
    pass


class InvalidValue(ValidationIssue):
    pass


class ProblemValidationError(ValueError):
    """Raised with the complete list of violations found in a problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        msg = "; ".join(f"{type(e).__name__}: {e}" for e in self.errors)
        super().__init__(msg)


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _raise_if(errors):
    if errors:
        raise ProblemValidationError(errors)


@dataclass(frozen=True)
class Dataset:
    """Labelled feature matrix, rows are instances.

    ``timestamps`` is an opaque orderable key (integer epoch); it may be
    omitted for data that is never split chronologically.
    """

    features: np.ndarray
    labels: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(np.atleast_2d(self.features)))
        object.__setattr__(self, "labels", _frozen(np.ravel(self.labels), dtype=np.int64))
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", _frozen(np.ravel(self.timestamps), dtype=np.int64))
        _raise_if(self._issues())

    def _issues(self):
        errors = []
        X, y = self.features, self.labels
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            errors.append(DimensionMismatch(f"features must be a non-empty 2-D matrix, got shape {X.shape}"))
        elif X.shape[0] != y.shape[0]:
            errors.append(DimensionMismatch(f"{X.shape[0]} feature rows but {y.shape[0]} labels"))
        if not np.all(np.isin(y, (0, 1))):
            errors.append(InvalidLabels("labels must be 0 or 1"))
        if not np.all(np.isfinite(X)):
            errors.append(InvalidValue("features contain NaN or Inf"))
        if self.timestamps is not None and self.timestamps.shape[0] != y.shape[0]:
            errors.append(DimensionMismatch(f"{self.timestamps.shape[0]} timestamps but {y.shape[0]} labels"))
        return errors

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def q(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        ts = None if self.timestamps is None else self.timestamps[idx]
        return Dataset(self.features[idx], self.labels[idx], ts)


@dataclass(frozen=True)
class AdversarySample:
    """The adversary's data: origin ``X0``, current ``X`` and labels ``Y``."""

    origin: np.ndarray
    current: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        origin = _frozen(np.atleast_2d(self.origin))
        current = origin if self.current is None else _frozen(np.atleast_2d(self.current))
        labels = np.ones(origin.shape[0], dtype=np.int64) if self.labels is None else self.labels
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "current", current)
        object.__setattr__(self, "labels", _frozen(np.ravel(labels), dtype=np.int64))
        _raise_if(self._issues())

    def _issues(self):
        errors = []
        X0, X, Y = self.origin, self.current, self.labels
        if X0.shape != X.shape:
            errors.append(DimensionMismatch(f"origin shape {X0.shape} != current shape {X.shape}"))
        if Y.shape[0] != X0.shape[0]:
            errors.append(DimensionMismatch(f"{X0.shape[0]} adversary rows but {Y.shape[0]} labels"))
        if not np.all(np.isin(Y, (0, 1))):
            errors.append(InvalidLabels("adversary labels must be 0 or 1"))
        if not (np.all(np.isfinite(X0)) and np.all(np.isfinite(X))):
            errors.append(InvalidValue("adversary data contain NaN or Inf"))
        zero = np.flatnonzero(np.linalg.norm(X0, axis=1) < ZERO_NORM)
        if zero.size:
            errors.append(ZeroOriginRow(f"origin rows {zero.tolist()} are zero vectors"))
        return errors

    @property
    def m(self) -> int:
        return self.origin.shape[0]

    @property
    def q(self) -> int:
        return self.origin.shape[1]

    def with_current(self, X) -> "AdversarySample":
        return AdversarySample(self.origin, X, self.labels)


@dataclass(frozen=True)
class HyperParams:
    """Similarity threshold ``delta``, ridge scale ``rho`` (None disables ridge)."""

    delta: float = 0.99
    rho: Optional[float] = 100.0
    normalize: bool = True

    def __post_init__(self):
        _raise_if(self._issues())

    def _issues(self):
        errors = []
        if not (-1.0 < self.delta < 1.0):
            errors.append(DeltaOutOfRange(f"delta={self.delta} is not inside (-1, 1)"))
        if self.rho is not None and not (self.rho > 0 and np.isfinite(self.rho)):
            errors.append(InvalidValue(f"rho={self.rho} must be positive or None"))
        return errors


@dataclass(frozen=True)
class BilevelProblem:
    """Static data D with labels gamma, the adversary sample, and hyperparameters."""

    static_data: Dataset
    adversary: AdversarySample
    params: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        _raise_if(self._issues())

    def _issues(self):
        errors = []
        if self.static_data.q != self.adversary.q:
            errors.append(
                DimensionMismatch(
                    f"static data has q={self.static_data.q}, adversary has q={self.adversary.q}"
                )
            )
        if not np.all(self.adversary.labels == 1):
            errors.append(InvalidLabels("adversary instances must carry the malicious label 1"))
        return errors

    @property
    def n(self) -> int:
        return self.static_data.n

    @property
    def m(self) -> int:
        return self.adversary.m

    @property
    def q(self) -> int:
        return self.static_data.q

    @property
    def D(self):
        return self.static_data.features

    @property
    def gamma(self):
        return self.static_data.labels

    @property
    def X0(self):
        return self.adversary.origin

    @property
    def X(self):
        return self.adversary.current

    @property
    def Y(self):
        return self.adversary.labels

    @property
    def delta(self) -> float:
        return self.params.delta

    @property
    def rho(self):
        return self.params.rho

    def with_current(self, X) -> "BilevelProblem":
        return BilevelProblem(self.static_data, self.adversary.with_current(X), self.params)

    @classmethod
    def from_arrays(cls, D, gamma, X0, delta=0.99, rho=100.0, X=None, Y=None, normalize=True):
        """Build and validate a problem from raw arrays, collecting every violation."""
        errors = []
        parts = {}
        for name, build in (
            ("static", lambda: Dataset(D, gamma)),
            ("adversary", lambda: AdversarySample(X0, X, Y)),
            ("params", lambda: HyperParams(delta, rho, normalize)),
        ):
            try:
                parts[name] = build()
            except ProblemValidationError as exc:
                errors.extend(exc.errors)
        _raise_if(errors)
        return cls(parts["static"], parts["adversary"], parts["params"])


def problem_issues(p: BilevelProblem) -> list:
    """Every invariant violation of ``p`` (empty when valid)."""
    return (
        p.static_data._issues()
        + p.adversary._issues()
        + p.params._issues()
        + p._issues()
    )


def validate_problem(p: BilevelProblem) -> BilevelProblem:
    """Return ``p`` unchanged if valid, else raise with the full list of violations."""
    _raise_if(problem_issues(p))
    return p
