"""Regression debugger for kernel ridge regression.

With the KRR closed form substituted, the relabeling problem is the weighted
lasso

    min_delta || Cw (M delta - target) ||^2 + (gamma / n) ||delta||_1

with ``M = [A; B]``, ``A = Kt (K + n lam I)^-1``, ``B = K (K + n lam I)^-1 - I``,
``target = [yt - A y; -B y]`` and ``Cw = diag(sqrt(c)/sqrt(m), I/sqrt(n))``.
The implicit-function hypergradient of the same objective is provided
separately so the two routes can check each other.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .core import Dataset, DomainError, OptimizerError, TrustedSet
from .kernel import rbf_kernel_matrix
from .learners import KrrFactor, LearnerConfig, train_krr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LassoSystem:
    A: np.ndarray
    B: np.ndarray
    row_scale: np.ndarray  # diagonal of Cw
    target: np.ndarray
    gram: np.ndarray  # M' Cw^2 M
    moment: np.ndarray  # M' Cw^2 target
    offset: float  # target' Cw^2 target

    @classmethod
    def from_blocks(cls, A, B, row_scale, target) -> "LassoSystem":
        A, B = np.atleast_2d(np.asarray(A, dtype=float)), np.asarray(B, dtype=float)
        B = B.reshape(-1, A.shape[1])
        row_scale = np.asarray(row_scale, dtype=float)
        target = np.asarray(target, dtype=float)
        M = np.vstack([A, B])
        W = row_scale ** 2
        gram = M.T @ (W[:, None] * M)
        gram = 0.5 * (gram + gram.T)
        return cls(A, B, row_scale, target, gram, M.T @ (W * target), float(target @ (W * target)))

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def M(self) -> np.ndarray:
        return np.vstack([self.A, self.B])

    def smooth(self, delta: np.ndarray) -> float:
        r = self.row_scale * (self.M @ delta - self.target)
        return float(r @ r)

    def smooth_grad(self, delta: np.ndarray) -> np.ndarray:
        return 2.0 * (self.gram @ delta - self.moment)

    def objective(self, delta: np.ndarray, gamma: float) -> float:
        return self.smooth(delta) + gamma / self.n * float(np.sum(np.abs(delta)))

    def optimality_residual(self, delta: np.ndarray, gamma: float) -> float:
        """Largest violation of the lasso subgradient condition."""
        g = self.smooth_grad(delta)
        pen = gamma / self.n
        nz = delta != 0
        res = np.where(nz, np.abs(g + pen * np.sign(delta)), np.maximum(np.abs(g) - pen, 0.0))
        return float(res.max(initial=0.0))


class RegressionProblem:
    """Kernel matrices and the shared Cholesky factor for one debug session."""

    def __init__(self, dataset: Dataset, trusted: TrustedSet, config: LearnerConfig):
        if dataset.is_classification:
            raise DomainError("regression debugger needs a regression dataset")
        trusted.check_against(dataset)
        self.config = config
        self.y = dataset.labels
        self.yt = trusted.labels
        self.c = trusted.confidences
        self.n = dataset.n
        self.m = trusted.m
        self.K = rbf_kernel_matrix(dataset.features, dataset.features, config.kernel)
        self.Kt = rbf_kernel_matrix(trusted.features, dataset.features, config.kernel)
        self.factor = KrrFactor(self.K, config.lam)
        self._system: Optional[LassoSystem] = None

    # inner problem -------------------------------------------------------
    def train(self, delta=None):
        y_eff = self.y if delta is None else self.y + delta
        return train_krr(self.K, y_eff, self.config.lam, self.config.kernel, factor=self.factor)

    def jacobian(self) -> np.ndarray:
        """d alpha / d delta, formed densely; equals (K + n lam I)^-1."""
        n = self.n
        # KKT map g = -(2/n) K (y + delta - K alpha) + 2 lam K alpha; the left K factor
        # is common to dg/dalpha and dg/ddelta and cancels in -(dg/dalpha)^-1 dg/ddelta.
        dg_dalpha = (2.0 / n) * (self.K + n * self.config.lam * np.eye(n))
        dg_ddelta = -(2.0 / n) * np.eye(n)
        return -linalg.solve(dg_dalpha, dg_ddelta, assume_a="pos")

    def apply_jacobian_t(self, v: np.ndarray) -> np.ndarray:
        return self.factor.solve(v)

    # outer objective -----------------------------------------------------
    def objective(self, delta, gamma: float = 0.0) -> float:
        delta = np.asarray(delta, dtype=float)
        alpha = self.train(delta).alpha
        rt = self.yt - self.Kt @ alpha
        r = self.y + delta - self.K @ alpha
        return float(
            np.sum(self.c * rt ** 2) / self.m
            + np.sum(r ** 2) / self.n
            + gamma / self.n * np.sum(np.abs(delta))
        )

    def hypergradient_terms(self, delta, gamma: float = 0.0, confidences=None) -> "GradientTerms":
        delta = np.asarray(delta, dtype=float)
        c = self.c if confidences is None else np.asarray(confidences, dtype=float)
        alpha = self.train(delta).alpha
        rt = self.yt - self.Kt @ alpha
        r = self.y + delta - self.K @ alpha
        grad_trusted = -(2.0 / self.m) * (self.Kt.T @ (c * rt))
        grad_self = -(2.0 / self.n) * (self.K.T @ r)
        return GradientTerms(
            trusted=self.apply_jacobian_t(grad_trusted),
            explicit=(2.0 / self.n) * r,
            implicit=self.apply_jacobian_t(grad_self),
            sparsity=(gamma / self.n) * np.sign(delta),
        )

    def hypergradient(self, delta, gamma: float = 0.0) -> np.ndarray:
        return self.hypergradient_terms(delta, gamma).total

    # weighted lasso -------------------------------------------------------
    @property
    def system(self) -> LassoSystem:
        if self._system is None:
            self._system = self._build_system()
        return self._system

    def _build_system(self) -> LassoSystem:
        n, m = self.n, self.m
        A = self.factor.solve(self.Kt.T).T
        B = self.factor.solve(self.K).T - np.eye(n)
        row_scale = np.concatenate([np.sqrt(self.c) / np.sqrt(m), np.full(n, 1.0 / np.sqrt(n))])
        target = np.concatenate([self.yt - A @ self.y, -(B @ self.y)])
        return LassoSystem.from_blocks(A, B, row_scale, target)


@dataclass(frozen=True)
class GradientTerms:
    """The hypergradient split into its four additive pieces."""

    trusted: np.ndarray
    explicit: np.ndarray
    implicit: np.ndarray
    sparsity: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.trusted + self.explicit + self.implicit + self.sparsity


def build_lasso_system(dataset: Dataset, trusted: TrustedSet, config: LearnerConfig) -> LassoSystem:
    return RegressionProblem(dataset, trusted, config).system


def regression_objective(delta, dataset: Dataset, trusted: TrustedSet, config: LearnerConfig,
                         gamma: float = 0.0) -> float:
    """Bilevel objective with the exact KRR inner solution substituted."""
    return RegressionProblem(dataset, trusted, config).objective(delta, gamma)


def regression_hypergradient(delta, dataset: Dataset, trusted: TrustedSet, config: LearnerConfig,
                             gamma: float = 0.0) -> np.ndarray:
    return RegressionProblem(dataset, trusted, config).hypergradient(delta, gamma)


def soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


@dataclass(frozen=True)
class LassoInfo:
    iterations: int
    polish_steps: int
    residual: float
    objective: float


def solve_weighted_lasso(system: LassoSystem, gamma: float, delta_init=None, *,
                         max_iter: int = 5000, rel_tol: float = 1e-9, opt_tol: float = 1e-7,
                         return_info: bool = False):
    """Minimize ``||Cw(M delta - target)||^2 + (gamma/n) ||delta||_1``.

    Accelerated proximal gradient (FISTA with function-value restarts), then
    an active-set pass that solves the support's stationarity equations
    exactly. The active-set pass matters when ``K + n lam I`` is badly
    conditioned and FISTA alone would stall short of the tolerance.
    """
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    n = system.n
    pen = gamma / n
    G, b = system.gram, system.moment
    if 2.0 * float(np.max(np.abs(b), initial=0.0)) <= pen * (1.0 + 1e-10):
        # zero satisfies the subgradient condition (up to round-off in forming b)
        x = np.zeros(n)
        if return_info:
            return x, LassoInfo(0, 0, system.optimality_residual(x, gamma), system.objective(x, gamma))
        return x
    x = np.zeros(n) if delta_init is None else np.array(delta_init, dtype=float)
    L = 2.0 * float(linalg.eigvalsh(G, subset_by_index=[n - 1, n - 1])[0])
    step = 1.0 / max(L, 1e-300)

    def F(v):
        return float(v @ (G @ v) - 2.0 * (b @ v)) + system.offset + pen * float(np.sum(np.abs(v)))

    z = x.copy()
    t = 1.0
    fx = F(x)
    it = 0
    for it in range(1, max_iter + 1):
        x_new = soft_threshold(z - step * 2.0 * (G @ z - b), step * pen)
        f_new = F(x_new)
        if f_new > fx:
            # restart momentum
            z, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        decrease = (fx - f_new) / max(abs(f_new), 1.0)
        x, fx, t = x_new, f_new, t_new
        if decrease < rel_tol or system.optimality_residual(x, gamma) < opt_tol:
            break

    polished, steps = _active_set_polish(G, b, x, pen / 2.0)
    if polished is not None and system.optimality_residual(polished, gamma) <= system.optimality_residual(x, gamma):
        x = polished
    resid = system.optimality_residual(x, gamma)
    if resid > opt_tol * max(1.0, pen, float(np.max(np.abs(b), initial=0.0))):
        raise OptimizerError(f"weighted lasso did not converge (residual {resid:.3e})", resid)
    if return_info:
        return x, LassoInfo(it, steps, resid, system.objective(x, gamma))
    return x


def _active_set_polish(G, b, x0, tau, max_steps: Optional[int] = None):
    """Active-set method for ``min x'Gx - 2b'x + 2 tau ||x||_1`` from a feasible start.

    Optimality: ``(Gx - b)_i = -tau sign(x_i)`` on the support and
    ``|Gx - b|_i <= tau`` elsewhere.
    """
    n = len(b)
    max_steps = max_steps or 20 * n + 20
    x = np.array(x0, dtype=float)
    active = list(np.flatnonzero(x))
    signs = {int(i): float(np.sign(x[i])) for i in active}
    slack = 1e-12 * max(1.0, tau)
    for step in range(max_steps):
        if active:
            S = np.array(sorted(active))
            s = np.array([signs[i] for i in S])
            try:
                z = linalg.solve(G[np.ix_(S, S)], b[S] - tau * s, assume_a="pos")
            except linalg.LinAlgError:
                return None, step
            bad = z * s <= 0
            if np.any(bad):
                # walk toward z until the first coordinate hits zero, drop it
                xs = x[S]
                ratios = np.where(bad, xs / np.where(bad, xs - z, 1.0), np.inf)
                j = int(np.argmin(ratios))
                theta = float(np.clip(ratios[j], 0.0, 1.0))
                x[S] = xs + theta * (z - xs)
                drop = S[bad & (np.abs(x[S]) <= 1e-15 * max(1.0, np.abs(xs).max()))]
                drop = set(drop.tolist()) | {int(S[j])}
                for i in drop:
                    x[i] = 0.0
                    active.remove(i)
                    signs.pop(i)
                continue
            x = np.zeros(n)
            x[S] = z
        c = G @ x - b
        viol = np.abs(c) - tau
        viol[active] = -np.inf
        i = int(np.argmax(viol))
        if viol[i] <= slack:
            return x, step
        active.append(i)
        signs[i] = -float(np.sign(c[i]))
    return None, max_steps
