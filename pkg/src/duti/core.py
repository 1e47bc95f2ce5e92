"""Shared domain types: datasets, trusted items, label shifts, flags and reports."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

REGRESSION = "regression"
CLASSIFICATION = "classification"

SIMPLEX_TOL = 1e-9


class DutiError(Exception):
    """Base class for errors raised by this package."""


class DomainError(DutiError, ValueError):
    """Input outside the domain an operation accepts."""


class OptimizerError(DutiError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class IllConditionedError(DutiError, np.linalg.LinAlgError):
    """A linear system that must be positive definite was not."""


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DomainError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite entries")
    return a


def _check_class_labels(labels: np.ndarray, k: int, name: str) -> np.ndarray:
    if not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
        raise DomainError(f"{name} must be integer class indices")
    labels = labels.astype(int)
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"{name}[{i}] = {labels[i]} is outside 0..{k - 1}")
    return labels


@dataclass(frozen=True)
class Dataset:
    """Labeled training set.

    ``true_labels`` is evaluation-only provenance; debuggers and baselines
    never read it.
    """

    features: np.ndarray
    labels: np.ndarray
    task: str = REGRESSION
    n_classes: Optional[int] = None
    true_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        X = _as_matrix(self.features, "features")
        y = np.asarray(self.labels, dtype=float).ravel()
        n = X.shape[0]
        if n < 1 or X.shape[1] < 1:
            raise DomainError("dataset needs n >= 1 rows and d >= 1 features")
        if y.shape[0] != n:
            raise DomainError(f"labels has length {y.shape[0]}, expected {n}")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise DomainError(f"unknown task {self.task!r}")
        k = self.n_classes
        if self.task == CLASSIFICATION:
            if k is None:
                k = int(np.max(y)) + 1 if y.size else 0
                k = max(k, 2)
            if k < 2:
                raise DomainError("classification needs at least 2 classes")
            y = _check_class_labels(y, k, "labels")
        elif not np.all(np.isfinite(y)):
            raise DomainError("regression labels must be finite")
        t = self.true_labels
        if t is not None:
            t = np.asarray(t, dtype=float).ravel()
            if t.shape[0] != n:
                raise DomainError(f"true_labels has length {t.shape[0]}, expected {n}")
            if self.task == CLASSIFICATION:
                t = _check_class_labels(t, k, "true_labels")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", k)
        object.__setattr__(self, "true_labels", t)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.task == CLASSIFICATION

    def without_truth(self) -> "Dataset":
        return Dataset(self.features, self.labels, self.task, self.n_classes)


@dataclass(frozen=True)
class TrustedSet:
    """Expert-verified items with nonnegative confidence weights."""

    features: np.ndarray
    labels: np.ndarray
    confidences: Optional[np.ndarray] = None

    DEFAULT_CONFIDENCE = 100.0

    def __post_init__(self):
        X = _as_matrix(self.features, "trusted features")
        y = np.asarray(self.labels, dtype=float).ravel()
        m = X.shape[0]
        if m < 1:
            raise DomainError("at least one trusted item is required")
        if y.shape[0] != m:
            raise DomainError(f"trusted labels has length {y.shape[0]}, expected {m}")
        c = self.confidences
        if c is None:
            c = np.full(m, self.DEFAULT_CONFIDENCE)
        c = np.asarray(c, dtype=float).ravel()
        if c.shape[0] != m:
            raise DomainError(f"confidences has length {c.shape[0]}, expected {m}")
        if np.any(~np.isfinite(c)) or np.any(c < 0):
            raise DomainError("confidences must be finite and nonnegative")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "confidences", c)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    def check_against(self, dataset: Dataset) -> None:
        if self.features.shape[1] != dataset.d:
            raise DomainError(
                f"trusted items have {self.features.shape[1]} features, "
                f"training set has {dataset.d}"
            )
        if dataset.is_classification:
            _check_class_labels(self.labels, dataset.n_classes, "trusted labels")

    def class_labels(self) -> np.ndarray:
        return self.labels.astype(int)


def one_hot(labels, k: int) -> np.ndarray:
    """Rows are canonical basis vectors ``e_{y_i}``."""
    labels = _check_class_labels(np.asarray(labels, dtype=float).ravel(), k, "labels")
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class DeltaState:
    """The debugger's decision variable.

    Regression: a length-n label shift. Classification: an n x k matrix
    whose rows are soft labels on the probability simplex.
    """

    delta: np.ndarray
    task: str = REGRESSION

    def __post_init__(self):
        self.delta = np.array(self.delta, dtype=float)
        self.check()

    def check(self) -> None:
        d = self.delta
        if not np.all(np.isfinite(d)):
            raise DomainError("delta has non-finite entries")
        if self.task == CLASSIFICATION:
            if d.ndim != 2:
                raise DomainError("classification delta must be n x k")
            if d.min() < -SIMPLEX_TOL or np.max(np.abs(d.sum(axis=1) - 1)) > SIMPLEX_TOL:
                raise DomainError("classification delta rows must lie on the simplex")

    def update(self, new) -> None:
        old = self.delta
        self.delta = np.array(new, dtype=float)
        try:
            self.check()
        except DomainError:
            self.delta = old
            raise


def fingerprint(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=float)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class ModelParams:
    """Dual coefficients of a trained kernel learner."""

    alpha: np.ndarray
    lam: float
    kernel: object
    train_fingerprint: str = ""
    iterations: int = 0
    residual: float = 0.0


@dataclass(frozen=True)
class FlagSet:
    indices: tuple
    iteration: int
    gamma: float

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise DomainError("flag set contains duplicate indices")
        if any(i < 0 for i in idx):
            raise DomainError("flag indices must be nonnegative")
        object.__setattr__(self, "indices", idx)


@dataclass(frozen=True)
class Round:
    """One continuation step: sparsity weight, solution and its flags."""

    iteration: int
    gamma: float
    delta: np.ndarray
    flags: FlagSet
    converged: bool = True
    error: Optional[str] = None
    # per-item distance from the initial labels: |delta_i| or 1 - delta_{i, y_i}
    deviation: Optional[np.ndarray] = None


@dataclass(frozen=True)
class RankedFlag:
    index: int
    rank: int
    first_iteration: int
    first_gamma: float
    deviation: float
    original_label: float
    fix: float


@dataclass
class DebugReport:
    task: str
    n: int
    n_classes: Optional[int]
    gamma0: float
    trajectory: list = field(default_factory=list)
    ranking: list = field(default_factory=list)
    budget: Optional[int] = None
    stop_reason: str = ""

    @property
    def ranked_indices(self) -> list:
        return [r.index for r in self.ranking]

    @property
    def fixes(self) -> dict:
        return {r.index: r.fix for r in self.ranking}

    @property
    def flag_union(self) -> set:
        out = set()
        for rnd in self.trajectory:
            out.update(rnd.flags.indices)
        return out

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.trajectory)
