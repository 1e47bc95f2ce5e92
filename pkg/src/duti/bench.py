"""Bug-simulation generators with ground-truth provenance.

Each generator is a pure function of its seed and parameters; random draws
come from named Philox streams (see :mod:`duti.rng`).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import CLASSIFICATION, REGRESSION, Dataset, DomainError, TrustedSet, one_hot
from .kernel import KernelConfig, median_heuristic_bandwidth, rbf_kernel_matrix
from .learners import LearnerConfig, predict_klr, train_klr_weighted
from .rng import RNG_ALGORITHM, make_rng


@dataclass(frozen=True)
class SimulatedCorpus:
    dataset: Dataset
    trusted: TrustedSet
    bug_indices: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        ds = self.dataset
        if ds.true_labels is None:
            raise DomainError("simulated corpora must carry true labels")
        expected = tuple(int(i) for i in np.flatnonzero(ds.labels != ds.true_labels))
        if tuple(self.bug_indices) != expected:
            raise DomainError("bug_indices must be exactly the items whose label differs from the truth")

    @property
    def bug_set(self) -> set:
        return set(self.bug_indices)


def _corpus(X, labels, true_labels, task, k, trusted, generator, seed, params) -> SimulatedCorpus:
    ds = Dataset(X, labels, task, k, true_labels=true_labels)
    bugs = tuple(int(i) for i in np.flatnonzero(ds.labels != ds.true_labels))
    prov = {"generator": generator, "seed": int(seed), "rng": RNG_ALGORITHM, "params": params}
    return SimulatedCorpus(ds, trusted, bugs, prov)


# --------------------------------------------------------------------------
# two-feature hiring toy

HP_TRUSTED_X = np.array([[0.1, 0.8], [0.4, 0.4]])  # hired inside the biased region; not hired below
HP_TRUSTED_Y = np.array([1, 0])
HP_BIAS_BOX = ((0.0, 0.3), (0.6, 1.0))  # (heritage range, education range)


def gen_harry_potter(seed: int = 0, n: int = 100) -> SimulatedCorpus:
    """Hiring toy with a biased cluster.

    Features are (heritage, education) in the unit square; the fair label is
    ``education >= 0.5`` ("hired" = 1). About 12% of the items sit in the
    low-heritage, high-education box and are all labeled "not hired". Two
    fixed trusted items straddle the fair boundary inside the biased region.
    """
    if n < 20:
        raise DomainError("the hiring toy needs n >= 20")
    rng = make_rng(seed, "harry-potter")
    n_bias = max(1, int(round(0.12 * n)))
    (h0, h1), (e0, e1) = HP_BIAS_BOX
    bias = np.column_stack([rng.uniform(h0, h1, n_bias), rng.uniform(e0, e1, n_bias)])
    clean = []
    while len(clean) < n - n_bias:
        p = rng.uniform(0.0, 1.0, 2)
        if not (h0 <= p[0] <= h1 and e0 <= p[1] <= e1):
            clean.append(p)
    X = np.vstack([bias, np.array(clean)])
    order = rng.permutation(n)
    X = X[order]
    true = (X[:, 1] >= 0.5).astype(int)
    in_box = np.zeros(n, bool)
    in_box[np.flatnonzero(order < n_bias)] = True
    labels = np.where(in_box, 0, true)
    trusted = TrustedSet(HP_TRUSTED_X.copy(), HP_TRUSTED_Y.astype(float))
    return _corpus(X, labels, true, CLASSIFICATION, 2, trusted, "harry_potter", seed, {"n": n})


# --------------------------------------------------------------------------
# sine regression toy

SINE_PEAK = (1.0, 1.5)
SINE_TRUSTED_RANGE = (1.05, 1.20)  # left flank of the flipped peak


def gen_sine_regression(seed: int = 0, n: int = 100, n_bugs: int = 24,
                        noise_sd: float = 0.1) -> SimulatedCorpus:
    """``y = sin(2 pi x) + noise`` on [0, 2] with the second positive peak negated.

    Exactly ``n_bugs`` points are drawn inside the peak interval and the rest
    outside it, which keeps the overall density near-uniform while pinning
    the bug count. Three noiseless trusted items are drawn on the left flank
    of the peak, so they deliberately leave most of it uncovered.
    """
    rng = make_rng(seed, "sine")
    a, b = SINE_PEAK
    x_in = rng.uniform(a, b, n_bugs)
    # outside [a, b] on [0, 2]: map a uniform on [0, 2 - (b - a)] around the gap
    u = rng.uniform(0.0, 2.0 - (b - a), n - n_bugs)
    x_out = np.where(u < a, u, u + (b - a))
    x = np.concatenate([x_in, x_out])
    order = rng.permutation(n)
    x = x[order]
    true = np.sin(2 * np.pi * x) + noise_sd * rng.standard_normal(n)
    in_peak = order < n_bugs
    labels = np.where(in_peak, -true, true)
    xt = np.sort(make_rng(seed, "sine-trusted").uniform(*SINE_TRUSTED_RANGE, 3))
    trusted = TrustedSet(xt[:, None], np.sin(2 * np.pi * xt))
    params = {"n": n, "n_bugs": n_bugs, "noise_sd": noise_sd, "peak": list(SINE_PEAK),
              "trusted_range": list(SINE_TRUSTED_RANGE)}
    return _corpus(x[:, None], labels, true, REGRESSION, None, trusted, "sine_regression", seed, params)


# --------------------------------------------------------------------------
# group-bias pipeline on tabular data


@dataclass(frozen=True)
class PartitionSizes:
    """Group sizes: A (trusted), B (training), C (ground-truth concept)."""

    a_protected: int = 20
    a_other: int = 20
    b_protected: int = 170
    b_other: int = 170
    c_other: int = 620


@dataclass(frozen=True)
class TabularData:
    features: np.ndarray
    labels: np.ndarray  # binary 0/1
    protected: np.ndarray  # bool mask of the protected group
    feature_names: tuple = ()


def read_tabular_csv(path, label_column: str, protected_column: str,
                     protected_threshold: Optional[float] = None,
                     protected_value: Optional[str] = None) -> TabularData:
    """Load a numeric CSV; the protected column is consumed, never emitted as a feature.

    The protected group is ``value <= protected_threshold`` when a threshold is
    given, else ``value == protected_value`` (default ``"1"``).
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = reader.fieldnames or []
    for col in (label_column, protected_column):
        if col not in header:
            raise DomainError(f"column {col!r} not found in {path}")
    feat_cols = [c for c in header if c not in (label_column, protected_column)]
    if not feat_cols:
        raise DomainError("no feature columns left after removing label and protected columns")
    X = np.array([[float(r[c]) for c in feat_cols] for r in rows])
    labels = np.array([int(float(r[label_column])) for r in rows])
    if not set(np.unique(labels)) <= {0, 1}:
        raise DomainError("the group-bias pipeline needs 0/1 labels")
    raw = [r[protected_column] for r in rows]
    if protected_threshold is not None:
        prot = np.array([float(v) <= protected_threshold for v in raw])
    else:
        target = "1" if protected_value is None else str(protected_value)
        prot = np.array([v.strip() == target for v in raw])
    return TabularData(X, labels, prot, tuple(feat_cols))


def _standardize(X, ref):
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def gen_fairness_bias(data: TabularData, sizes: PartitionSizes = PartitionSizes(), seed: int = 0,
                      concept: Optional[LearnerConfig] = None) -> SimulatedCorpus:
    """Simulate systematic label bugs against a protected group.

    Group C (non-protected only) trains a KLR ground-truth concept. Group A
    (mixed) is relabeled by that concept and becomes the trusted set; group B
    (mixed) keeps its original labels and is the buggy training set, with
    truth given by the concept. Features are z-scored on the full table.
    """
    prot_idx = np.flatnonzero(data.protected)
    other_idx = np.flatnonzero(~data.protected)
    need_p = sizes.a_protected + sizes.b_protected
    need_o = sizes.a_other + sizes.b_other + sizes.c_other
    if len(prot_idx) < need_p or len(other_idx) < need_o:
        raise DomainError(
            f"insufficient group sizes: need {need_p} protected / {need_o} other, "
            f"have {len(prot_idx)} / {len(other_idx)}"
        )
    rng = make_rng(seed, "fairness-partition")
    prot_idx = rng.permutation(prot_idx)
    other_idx = rng.permutation(other_idx)
    A = np.concatenate([prot_idx[:sizes.a_protected], other_idx[:sizes.a_other]])
    B = np.concatenate([prot_idx[sizes.a_protected:need_p],
                        other_idx[sizes.a_other:sizes.a_other + sizes.b_other]])
    C = other_idx[sizes.a_other + sizes.b_other:need_o]
    B = rng.permutation(B)

    X = _standardize(data.features, data.features)
    if concept is None:
        concept = LearnerConfig(lam=1e-3, kernel=KernelConfig(median_heuristic_bandwidth(X[C])))
    Kc = rbf_kernel_matrix(X[C], X[C], concept.kernel)
    f_star = train_klr_weighted(Kc, one_hot(data.labels[C], 2), concept.lam, concept)

    def f(idx):
        P = predict_klr(f_star, rbf_kernel_matrix(X[idx], X[C], concept.kernel))
        return np.argmax(P, axis=1)

    trusted = TrustedSet(X[A], f(A).astype(float))
    params = {
        "sizes": {k: getattr(sizes, k) for k in PartitionSizes.__dataclass_fields__},
        "concept_lambda": concept.lam,
        "concept_bandwidth": concept.kernel.bandwidth,
        "feature_names": list(data.feature_names),
    }
    return _corpus(X[B], data.labels[B], f(B), CLASSIFICATION, 2, trusted, "fairness_bias", seed, params)


def synthetic_loan_table(seed: int = 0, n_protected: int = 190, n_other: int = 810, d: int = 6,
                         bias: float = 0.6, noise: float = 0.05) -> TabularData:
    """Synthetic loan-style table with a decline bias against the protected group.

    Approval follows a fixed nonlinear rule of the features; a fraction
    ``bias`` of the protected group's approvals are flipped to declines and
    every label is flipped with probability ``noise``.
    """
    rng = make_rng(seed, "synthetic-loan")
    n = n_protected + n_other
    X = rng.standard_normal((n, d))
    score = X[:, 0] + 0.8 * X[:, 1] - 0.5 * X[:, 2] ** 2 + 0.5 * X[:, 3] * X[:, 1] + 0.4
    labels = (score > 0).astype(int)
    prot = np.zeros(n, bool)
    prot[rng.permutation(n)[:n_protected]] = True
    flip_bias = prot & (labels == 1) & (rng.uniform(size=n) < bias)
    labels[flip_bias] = 0
    flip_noise = rng.uniform(size=n) < noise
    labels[flip_noise] = 1 - labels[flip_noise]
    return TabularData(X, labels, prot, tuple(f"x{j}" for j in range(d)))


def write_tabular_csv(path, data: TabularData, label_column: str = "label",
                      protected_column: str = "protected") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.feature_names) + [protected_column, label_column])
        for x, p, y in zip(data.features, data.protected, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(p), int(y)])


# --------------------------------------------------------------------------
# noisy-annotator multiclass relabeling


def gen_noisy_relabel_multiclass(seed: int = 0, k: int = 4, n: int = 120, noise_level: float = 1.0,
                                 d: int = 2, n_concept_per_class: int = 40,
                                 trusted_per_class: int = 5, separation: float = 3.0) -> SimulatedCorpus:
    """Buggy labels from a clean classifier applied to corrupted features.

    Data are a k-component Gaussian mixture with class means on a circle.
    A KLR concept trained on a clean split labels ``X + noise_level * N(0, I)``;
    the mixture component is the correct label, and stored features stay clean.
    """
    if k < 3:
        raise DomainError("the multiclass relabeling generator needs k >= 3")
    rng = make_rng(seed, "noisy-relabel")
    angles = 2 * np.pi * np.arange(k) / k
    means = np.zeros((k, d))
    means[:, 0] = separation * np.cos(angles)
    if d > 1:
        means[:, 1] = separation * np.sin(angles)

    def draw(per_class):
        comp = np.repeat(np.arange(k), per_class)
        return means[comp] + rng.standard_normal((comp.size, d)), comp

    Xc, yc = draw(n_concept_per_class)
    per = np.full(k, n // k)
    per[: n % k] += 1
    comp = np.repeat(np.arange(k), per)
    X = means[comp] + rng.standard_normal((n, d))
    Xt, yt = draw(trusted_per_class)
    corrupt = X + noise_level * rng.standard_normal((n, d))
    order = rng.permutation(n)
    X, comp, corrupt = X[order], comp[order], corrupt[order]

    concept = LearnerConfig(lam=1e-3, kernel=KernelConfig(median_heuristic_bandwidth(Xc)))
    f_star = train_klr_weighted(rbf_kernel_matrix(Xc, Xc, concept.kernel), one_hot(yc, k), concept.lam, concept)
    labels = np.argmax(predict_klr(f_star, rbf_kernel_matrix(corrupt, Xc, concept.kernel)), axis=1)
    trusted = TrustedSet(Xt, yt.astype(float))
    params = {"k": k, "n": n, "noise_level": noise_level, "d": d,
              "n_concept_per_class": n_concept_per_class, "trusted_per_class": trusted_per_class,
              "separation": separation}
    return _corpus(X, labels, comp, CLASSIFICATION, k, trusted, "noisy_relabel_multiclass", seed, params)


GENERATORS = {
    "harry_potter": gen_harry_potter,
    "sine": gen_sine_regression,
    "noisy_relabel": gen_noisy_relabel_multiclass,
}
