"""Comparison debuggers: influence function, nearest trusted neighbor, and
label-noise detection with oracle flip counts."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .classification import ClassificationProblem
from .core import Dataset, DomainError, TrustedSet
from .kernel import KernelConfig, median_heuristic_bandwidth, rbf_kernel_matrix
from .learners import LearnerConfig
from .regression import RegressionProblem
from .rng import make_rng


@dataclass(frozen=True)
class BaselineRanking:
    """Ranked ``(index, score)`` pairs, best suspect first, with optional fixes."""

    items: tuple
    fixes: dict = field(default_factory=dict)
    method: str = ""

    def __post_init__(self):
        items = tuple((int(i), float(s)) for i, s in self.items)
        idx = [i for i, _ in items]
        if len(set(idx)) != len(idx):
            raise DomainError("ranking contains duplicate indices")
        if not all(np.isfinite(s) for _, s in items):
            raise DomainError("ranking scores must be finite")
        object.__setattr__(self, "items", items)

    @property
    def indices(self) -> list:
        return [i for i, _ in self.items]

    @property
    def scores(self) -> list:
        return [s for _, s in self.items]

    def __len__(self):
        return len(self.items)


def _ranked(indices, scores, descending: bool) -> list:
    """Sort by score (direction given) with ascending index as tie-break."""
    keyed = sorted(zip(indices, scores), key=lambda p: (-p[1] if descending else p[1], p[0]))
    return [(int(i), float(s)) for i, s in keyed]


# --------------------------------------------------------------------------
# influence function

def influence_values(dataset: Dataset, trusted: TrustedSet, config: LearnerConfig) -> np.ndarray:
    """Influence of each training label on the mean trusted loss.

    Equals the trusted-item term of the debugger's hypergradient at the
    original labels with every confidence set to one.
    """
    ones = np.ones(trusted.m)
    if dataset.is_classification:
        problem = ClassificationProblem(dataset, trusted, config)
        state = problem.fit(problem.Y)
        return problem.hypergradient_terms(state, 0.0, confidences=ones).trusted
    problem = RegressionProblem(dataset, trusted, config)
    return problem.hypergradient_terms(np.zeros(problem.n), 0.0, confidences=ones).trusted


def influence_rank(dataset: Dataset, trusted: TrustedSet, config: LearnerConfig) -> BaselineRanking:
    """Regression: rank all items by ``|I_i|``; the fix direction is ``-sign(I_i)``.

    Classification: flag items whose influence on their own label is
    positive, largest first; the fix is the other label with the most
    negative influence.
    """
    dataset = dataset.without_truth()
    infl = influence_values(dataset, trusted, config)
    if not dataset.is_classification:
        items = _ranked(range(dataset.n), np.abs(infl), descending=True)
        fixes = {i: float(-np.sign(infl[i])) for i, _ in items}
        return BaselineRanking(items, fixes, "influence")
    y = dataset.labels.astype(int)
    own = infl[np.arange(dataset.n), y]
    flagged = np.flatnonzero(own > 0)
    items = _ranked(flagged, own[flagged], descending=True)
    others = infl.copy()
    others[np.arange(dataset.n), y] = np.inf
    fixes = {i: float(np.argmin(others[i])) for i, _ in items}
    return BaselineRanking(items, fixes, "influence")


# --------------------------------------------------------------------------
# nearest trusted neighbor

def normalize_features(X_train, *others):
    """Z-score every matrix with the training mean and (population) std.

    Dimensions that are constant on the training set are dropped.
    """
    X_train = np.asarray(X_train, dtype=float)
    mu = X_train.mean(axis=0)
    sd = X_train.std(axis=0)
    keep = sd > 0
    out = [(X_train[:, keep] - mu[keep]) / sd[keep]]
    out += [(np.asarray(X, dtype=float)[:, keep] - mu[keep]) / sd[keep] for X in others]
    return out


def nn_rank(dataset: Dataset, trusted: TrustedSet) -> BaselineRanking:
    """Rank by normalized Euclidean distance to the closest trusted item.

    In classification only items disagreeing with that trusted item's label
    are flagged, and its label is the suggested fix.
    """
    trusted.check_against(dataset)
    Xn, Tn = normalize_features(dataset.features, trusted.features)
    if Xn.shape[1] == 0:
        dist = np.zeros((dataset.n, trusted.m))
    else:
        dist = cdist(Xn, Tn)
    nearest = np.argmin(dist, axis=1)
    d_near = dist[np.arange(dataset.n), nearest]
    if not dataset.is_classification:
        items = _ranked(range(dataset.n), d_near, descending=False)
        return BaselineRanking(items, {}, "nearest_neighbor")
    t_label = trusted.class_labels()[nearest]
    flagged = np.flatnonzero(t_label != dataset.labels.astype(int))
    items = _ranked(flagged, d_near[flagged], descending=False)
    fixes = {i: float(t_label[i]) for i, _ in items}
    return BaselineRanking(items, fixes, "nearest_neighbor")


# --------------------------------------------------------------------------
# label noise detection with oracle flip counts

@dataclass(frozen=True)
class LndProblem:
    """Maximize ``eta' Q eta + 2 eta' q`` over sign vectors with fixed flip counts.

    ``Q_ij = s_i s_j K(x_i, x_j)`` for training signs ``s``; ``q`` collects the
    trusted items, which enter as extra points held at their own label.
    ``forced`` is -1 (must flip), +1 (must keep) or 0 (free) per item.
    """

    Q: np.ndarray
    q: np.ndarray
    positive: np.ndarray  # bool mask of items observed with the positive label
    n_pos: int
    n_neg: int
    forced: np.ndarray

    def value(self, eta) -> float:
        eta = np.asarray(eta, dtype=float)
        return float(eta @ self.Q @ eta + 2.0 * eta @ self.q)

    def flip_gain(self, eta) -> np.ndarray:
        """Objective change from flipping each single coordinate of ``eta``."""
        return -4.0 * eta * (self.Q @ eta + self.q) + 4.0 * np.diag(self.Q)

    def feasible(self, eta) -> bool:
        flipped = eta < 0
        if np.any((self.forced != 0) & (eta != self.forced)):
            return False
        return (int(np.sum(flipped & self.positive)) == self.n_pos
                and int(np.sum(flipped & ~self.positive)) == self.n_neg)


def lnd_problem(dataset: Dataset, trusted: TrustedSet, counts, bandwidth: Optional[float] = None,
                match_tol: float = 1e-12) -> LndProblem:
    if not dataset.is_classification or dataset.n_classes != 2:
        raise DomainError("label noise detection supports binary classification only")
    n_pos, n_neg = (int(c) for c in counts)
    trusted.check_against(dataset)
    y = dataset.labels.astype(int)
    positive = y == 1
    if n_pos < 0 or n_neg < 0:
        raise DomainError("flip counts must be nonnegative")
    if n_pos + n_neg > dataset.n or n_pos > positive.sum() or n_neg > (~positive).sum():
        raise DomainError(f"cannot flip {n_pos} positive and {n_neg} negative items "
                          f"out of {positive.sum()} and {(~positive).sum()}")
    Xn, Tn = normalize_features(dataset.features, trusted.features)
    if bandwidth is None:
        bandwidth = median_heuristic_bandwidth(Xn)
    kcfg = KernelConfig(bandwidth)
    s = 2.0 * y - 1.0
    st = 2.0 * trusted.class_labels() - 1.0
    Q = np.outer(s, s) * rbf_kernel_matrix(Xn, Xn, kcfg)
    q = s * (rbf_kernel_matrix(Xn, Tn, kcfg) @ st)
    # a training item sitting on a trusted item must end up with the trusted label
    forced = np.zeros(dataset.n)
    if Xn.shape[1]:
        dist = cdist(Xn, Tn)
        for i, t in zip(*np.nonzero(dist <= match_tol)):
            want = 1.0 if s[i] == st[t] else -1.0
            if forced[i] not in (0.0, want):
                raise DomainError(f"training item {i} matches trusted items with conflicting labels")
            forced[i] = want
    prob = LndProblem(Q, q, positive, n_pos, n_neg, forced)
    for mask, count, name in ((positive, n_pos, "positive"), (~positive, n_neg, "negative")):
        must = int(np.sum(mask & (forced < 0)))
        free = int(np.sum(mask & (forced == 0)))
        if must > count or must + free < count:
            raise DomainError(f"pinned items make {count} {name} flips infeasible")
    return prob


def _random_start(prob: LndProblem, rng: np.random.Generator) -> np.ndarray:
    eta = np.ones(prob.Q.shape[0])
    eta[prob.forced < 0] = -1.0
    for mask, count in ((prob.positive, prob.n_pos), (~prob.positive, prob.n_neg)):
        free = np.flatnonzero(mask & (prob.forced == 0))
        need = count - int(np.sum(mask & (prob.forced < 0)))
        eta[rng.permutation(free)[:need]] = -1.0
    return eta


def _swap_search(prob: LndProblem, eta: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Repeatedly apply the best improving (unflip i, flip j) swap within a label group."""
    eta = eta.copy()
    free = prob.forced == 0
    groups = [prob.positive & free, ~prob.positive & free]
    while True:
        gain = prob.flip_gain(eta)
        best = (tol, None, None)
        for mask in groups:
            out_ = np.flatnonzero(mask & (eta < 0))
            in_ = np.flatnonzero(mask & (eta > 0))
            if out_.size == 0 or in_.size == 0:
                continue
            pair = (gain[out_][:, None] + gain[in_][None, :]
                    + 8.0 * np.outer(eta[out_], eta[in_]) * prob.Q[np.ix_(out_, in_)])
            a, b = np.unravel_index(np.argmax(pair), pair.shape)
            if pair[a, b] > best[0]:
                best = (pair[a, b], out_[a], in_[b])
        if best[1] is None:
            return eta
        eta[best[1]] = 1.0
        eta[best[2]] = -1.0


def lnd_solve(prob: LndProblem, restarts: int = 10, seed: int = 0) -> np.ndarray:
    """Best of ``restarts`` swap searches from seeded random feasible starts."""
    rng = make_rng(seed, "lnd-restarts")
    best_eta, best_val = None, -np.inf
    for _ in range(max(1, restarts)):
        eta = _swap_search(prob, _random_start(prob, rng))
        val = prob.value(eta)
        # deterministic best-of: larger value, then lexicographically larger eta
        if best_eta is None or val > best_val + 1e-12 or (
                abs(val - best_val) <= 1e-12 and tuple(eta) > tuple(best_eta)):
            best_eta, best_val = eta, val
    return best_eta


def lnd_brute_force(prob: LndProblem):
    """Exhaustive optimum over every feasible flip set (small n only)."""
    n = prob.Q.shape[0]
    pos = np.flatnonzero(prob.positive)
    neg = np.flatnonzero(~prob.positive)
    best_eta, best_val = None, -np.inf
    for fp in combinations(pos, prob.n_pos):
        for fn in combinations(neg, prob.n_neg):
            eta = np.ones(n)
            eta[list(fp) + list(fn)] = -1.0
            if not prob.feasible(eta):
                continue
            val = prob.value(eta)
            if val > best_val:
                best_eta, best_val = eta, val
    return best_eta, best_val


def lnd_oracle(dataset: Dataset, trusted: TrustedSet, counts, bandwidth: Optional[float] = None,
               restarts: int = 10, seed: int = 0) -> BaselineRanking:
    """Flag the flip set found by local search, ordered by how much each flip contributes.

    ``counts = (n_pos, n_neg)`` are the true numbers of mislabeled items
    observed with the positive and the negative label.
    """
    dataset = dataset.without_truth()
    prob = lnd_problem(dataset, trusted, counts, bandwidth)
    eta = lnd_solve(prob, restarts, seed)
    flipped = np.flatnonzero(eta < 0)
    # loss in objective if the flip were undone
    contribution = -prob.flip_gain(eta)[flipped]
    items = _ranked(flipped, contribution, descending=True)
    y = dataset.labels.astype(int)
    fixes = {i: float(1 - y[i]) for i, _ in items}
    return BaselineRanking(items, fixes, "lnd_oracle")


def oracle_counts(dataset: Dataset, bug_indices) -> tuple:
    """True flip counts ``(n_pos, n_neg)`` split by observed label."""
    idx = np.asarray(sorted(bug_indices), dtype=int)
    y = dataset.labels.astype(int)[idx] if idx.size else np.array([], dtype=int)
    return int(np.sum(y == 1)), int(np.sum(y == 0))
