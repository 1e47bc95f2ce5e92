"""Kernel ridge regression, weighted multiclass kernel logistic regression, and CV.

Both learners are regularized empirical risk minimizers over dual
coefficients ``alpha``:

* KRR minimizes ``(1/n) sum_i (y_i - K_i alpha)^2 + lam * alpha' K alpha``,
  solved in closed form by ``alpha = (K + n lam I)^-1 y``.
* Weighted KLR minimizes
  ``-(1/n) sum_ij W_ij K_i alpha_j + (1/n) sum_i logsumexp_j(K_i alpha_j)
  + (lam/2) sum_j alpha_j' K alpha_j``.

The KLR stationarity condition ``K [(P - W)/n + lam alpha] = 0`` is solved
through its kernel-free factor ``h(alpha) = (P - W)/n + lam alpha``; Newton
steps on ``h`` coincide with Newton steps on the objective whenever ``K`` is
invertible and stay well conditioned when ``K`` is nearly singular.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from .core import (
    SIMPLEX_TOL,
    DomainError,
    IllConditionedError,
    ModelParams,
    OptimizerError,
    Dataset,
    fingerprint,
    one_hot,
)
from .kernel import KernelConfig, median_heuristic_bandwidth, rbf_kernel_matrix
from .rng import make_rng

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(10.0 ** p for p in range(-4, 2))
DEFAULT_SIGMA_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class LearnerConfig:
    lam: float = 1e-2
    kernel: KernelConfig = field(default_factory=KernelConfig)
    newton_tol: float = 1e-8
    newton_max_iter: int = 100

    def __post_init__(self):
        if not (self.lam > 0 and np.isfinite(self.lam)):
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if not self.newton_tol > 0:
            raise DomainError("newton_tol must be positive")
        if not isinstance(self.kernel, KernelConfig):
            object.__setattr__(self, "kernel", KernelConfig(self.kernel))


# --------------------------------------------------------------------------
# kernel ridge regression


class KrrFactor:
    """Cholesky factor of ``K + n lam I``, shared by every solve of a session."""

    def __init__(self, K: np.ndarray, lam: float):
        K = np.asarray(K, dtype=float)
        n = K.shape[0]
        if K.shape != (n, n):
            raise DomainError(f"kernel matrix must be square, got {K.shape}")
        if not lam > 0:
            raise DomainError("lambda must be positive")
        self.K = K
        self.lam = float(lam)
        self.n = n
        try:
            self.cho = linalg.cho_factor(K + n * lam * np.eye(n), lower=True)
        except linalg.LinAlgError as exc:
            raise IllConditionedError(f"K + n*lambda*I is not positive definite: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.cho, rhs)


def train_krr(K, y_eff, lam: float, kernel: Optional[KernelConfig] = None,
              factor: Optional[KrrFactor] = None) -> ModelParams:
    """Closed-form KRR dual coefficients for effective labels ``y + delta``."""
    if factor is None:
        factor = KrrFactor(K, lam)
    y_eff = np.asarray(y_eff, dtype=float).ravel()
    if y_eff.shape[0] != factor.n:
        raise DomainError(f"label vector has length {y_eff.shape[0]}, expected {factor.n}")
    alpha = factor.solve(y_eff)
    resid = float(np.max(np.abs(factor.K @ alpha + factor.n * factor.lam * alpha - y_eff), initial=0.0))
    if resid > 1e-8 * (1.0 + np.max(np.abs(y_eff), initial=0.0)):
        raise IllConditionedError(f"KRR solve residual {resid:.3e} too large")
    return ModelParams(alpha, factor.lam, kernel, fingerprint(y_eff), residual=resid)


def predict_krr(params: ModelParams, K_cross) -> np.ndarray:
    K_cross = np.atleast_2d(np.asarray(K_cross, dtype=float))
    if K_cross.shape[1] != params.alpha.shape[0]:
        raise DomainError(
            f"cross kernel has {K_cross.shape[1]} columns, model was trained on {params.alpha.shape[0]}"
        )
    return K_cross @ params.alpha


# --------------------------------------------------------------------------
# weighted multiclass kernel logistic regression


def klr_objective(K, W, alpha, lam: float) -> float:
    n = K.shape[0]
    S = K @ alpha
    return float(
        (-np.sum(W * S) + np.sum(logsumexp(S, axis=1))) / n
        + 0.5 * lam * np.sum(alpha * S)
    )


def klr_reduced_residual(K, W, alpha, lam: float, P: Optional[np.ndarray] = None) -> np.ndarray:
    """``h(alpha) = (P - W)/n + lam alpha``; the KKT residual is ``K h``."""
    if P is None:
        P = softmax(K @ alpha, axis=1)
    return (P - W) / K.shape[0] + lam * alpha


def klr_kkt_residual(K, W, alpha, lam: float) -> np.ndarray:
    """Gradient of the weighted KLR objective in ``alpha`` (the KKT map ``g``)."""
    return K @ klr_reduced_residual(K, W, alpha, lam)


def klr_softmax_blocks(P: np.ndarray) -> np.ndarray:
    """Per-item ``diag(p_i) - p_i p_i'`` blocks, shape (n, k, k).

    These do not depend on the item's label, so one set serves every class.
    """
    blocks = -P[:, :, None] * P[:, None, :]
    idx = np.arange(P.shape[1])
    blocks[:, idx, idx] += P
    return blocks


def klr_reduced_jacobian(K, P, lam: float) -> np.ndarray:
    """Jacobian of ``h`` w.r.t. ``alpha`` (row-major ``(i, j)`` flattening), (nk, nk)."""
    n, k = P.shape
    blocks = klr_softmax_blocks(P)
    D = (K[:, None, :, None] * (blocks / n)[:, :, None, :]).reshape(n * k, n * k)
    D[np.diag_indices_from(D)] += lam
    return D


def klr_hessian(K, P, lam: float) -> np.ndarray:
    """Hessian of the KLR objective, ``(1/n) sum_i H_i + lam K'``, shape (nk, nk)."""
    n, k = P.shape
    blocks = klr_softmax_blocks(P)
    H = np.einsum("ai,il,ijm->ajlm", K, K, blocks).reshape(n * k, n * k) / n
    H += lam * np.kron(K, np.eye(k))
    return H


@dataclass
class NewtonTrace:
    objectives: list = field(default_factory=list)
    decrements: list = field(default_factory=list)
    steps: list = field(default_factory=list)


def train_klr_weighted(K, W, lam: float, cfg: Optional[LearnerConfig] = None,
                       alpha0: Optional[np.ndarray] = None,
                       trace: Optional[NewtonTrace] = None, strict: bool = True) -> ModelParams:
    """Damped Newton for weighted KLR; rows of ``W`` must lie on the simplex.

    ``strict=False`` skips the simplex check, which finite-difference probes
    of the ambient gradient need.
    """
    cfg = cfg or LearnerConfig(lam=lam)
    K = np.asarray(K, dtype=float)
    W = np.asarray(W, dtype=float)
    n, k = W.shape
    if K.shape != (n, n):
        raise DomainError(f"kernel is {K.shape}, weights are {W.shape}")
    off_simplex = W.min() < -SIMPLEX_TOL or np.max(np.abs(W.sum(axis=1) - 1.0)) > SIMPLEX_TOL
    if strict and off_simplex:
        raise DomainError("weight rows must lie on the probability simplex")
    alpha = np.zeros((n, k)) if alpha0 is None else np.array(alpha0, dtype=float)
    tol = cfg.newton_tol
    c_armijo = 1e-4

    S = K @ alpha
    P = softmax(S, axis=1)
    obj = klr_objective(K, W, alpha, lam)
    it = 0
    while True:
        h = klr_reduced_residual(K, W, alpha, lam, P)
        g = K @ h
        resid = float(max(np.max(np.abs(g)), np.max(np.abs(h))))
        if resid <= tol:
            break
        if it >= cfg.newton_max_iter:
            raise OptimizerError(
                f"KLR Newton did not converge in {cfg.newton_max_iter} iterations "
                f"(residual {resid:.3e})", resid)
        D = klr_reduced_jacobian(K, P, lam)
        try:
            step = -linalg.solve(D, h.ravel(), check_finite=False).reshape(n, k)
        except linalg.LinAlgError as exc:
            raise IllConditionedError(f"singular KLR Newton system: {exc}") from exc
        slope = float(np.sum(g * step))
        if trace is not None:
            trace.objectives.append(obj)
            trace.decrements.append(max(-slope, 0.0))
        t = 1.0
        while True:
            cand = alpha + t * step
            cand_obj = klr_objective(K, W, cand, lam)
            if cand_obj <= obj + c_armijo * t * slope or t < 1e-10:
                break
            # objective differences below round-off; accept the full Newton step
            if abs(slope) < 1e-14 * max(1.0, abs(obj)):
                cand = alpha + step
                cand_obj = klr_objective(K, W, cand, lam)
                t = 1.0
                break
            t *= 0.5
        if trace is not None:
            trace.steps.append(t)
        alpha, obj = cand, cand_obj
        P = softmax(K @ alpha, axis=1)
        it += 1
    return ModelParams(alpha, float(lam), cfg.kernel, fingerprint(W), iterations=it, residual=resid)


def predict_klr(params: ModelParams, K_cross) -> np.ndarray:
    K_cross = np.atleast_2d(np.asarray(K_cross, dtype=float))
    if K_cross.shape[1] != params.alpha.shape[0]:
        raise DomainError(
            f"cross kernel has {K_cross.shape[1]} columns, model was trained on {params.alpha.shape[0]}"
        )
    return softmax(K_cross @ params.alpha, axis=1)


# --------------------------------------------------------------------------
# hyperparameter selection


def default_sigma_grid(X) -> tuple:
    med = median_heuristic_bandwidth(X)
    return tuple(med * f for f in DEFAULT_SIGMA_FACTORS)


def fold_assignment(n: int, folds: int, seed: int) -> list:
    perm = make_rng(seed, "cv-folds").permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _fold_loss(dataset: Dataset, K: np.ndarray, lam: float, train_idx, val_idx,
               cfg: LearnerConfig, warm: dict) -> float:
    Ktr = K[np.ix_(train_idx, train_idx)]
    Kval = K[np.ix_(val_idx, train_idx)]
    if dataset.is_classification:
        Y = one_hot(dataset.labels[train_idx], dataset.n_classes)
        params = train_klr_weighted(Ktr, Y, lam, replace(cfg, lam=lam), alpha0=warm.get("alpha"))
        warm["alpha"] = params.alpha
        P = predict_klr(params, Kval)
        yv = dataset.labels[val_idx]
        return float(-np.mean(np.log(np.clip(P[np.arange(len(val_idx)), yv], 1e-300, None))))
    params = train_krr(Ktr, dataset.labels[train_idx], lam)
    pred = predict_krr(params, Kval)
    return float(np.mean((pred - dataset.labels[val_idx]) ** 2))


def cross_validate(dataset: Dataset, lam_grid: Optional[Sequence[float]] = None,
                   sigma_grid: Optional[Sequence[float]] = None, folds: int = 10,
                   seed: int = 0, base: Optional[LearnerConfig] = None,
                   return_table: bool = False):
    """Grid-search (lambda, sigma) by k-fold validation loss.

    Squared error for regression, negative log-likelihood for classification.
    Exact ties prefer larger lambda, then larger sigma.
    """
    lam_grid = tuple(DEFAULT_LAMBDA_GRID if lam_grid is None else lam_grid)
    sigma_grid = tuple(default_sigma_grid(dataset.features) if sigma_grid is None else sigma_grid)
    if not lam_grid or not sigma_grid:
        raise DomainError("hyperparameter grids must be non-empty")
    n = dataset.n
    if n < folds:
        raise DomainError(f"need at least {folds} items for {folds}-fold CV, got {n}")
    base = base or LearnerConfig()
    parts = fold_assignment(n, folds, seed)
    all_idx = np.arange(n)

    table = []
    for sigma in sigma_grid:
        kcfg = KernelConfig(sigma)
        K = rbf_kernel_matrix(dataset.features, dataset.features, kcfg)
        warms = [dict() for _ in parts]
        # descending lambda so KLR warm starts move from smooth to sharp fits
        for lam in sorted(lam_grid, reverse=True):
            losses = []
            for val_idx, warm in zip(parts, warms):
                train_idx = np.setdiff1d(all_idx, val_idx, assume_unique=True)
                try:
                    losses.append(_fold_loss(dataset, K, lam, train_idx, val_idx,
                                             replace(base, kernel=kcfg), warm))
                except (OptimizerError, IllConditionedError) as exc:
                    log.debug("CV fit failed at lam=%g sigma=%g: %s", lam, sigma, exc)
                    losses.append(np.inf)
                    warm.clear()
            table.append((float(np.mean(losses)), lam, sigma))
    best = min(table, key=lambda row: (row[0], -row[1], -row[2]))
    if not np.isfinite(best[0]):
        raise OptimizerError("every cross-validation fit failed")
    cfg = replace(base, lam=best[1], kernel=KernelConfig(best[2]))
    if return_table:
        return cfg, table
    return cfg
