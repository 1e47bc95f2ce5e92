"""Classification debugger for weighted multiclass kernel logistic regression.

The decision variable is a matrix of soft labels ``delta`` (rows on the
probability simplex). The retrained model ``alpha(delta)`` is defined
implicitly by the KLR stationarity condition, and the outer objective

    (1/m) sum_i c_i nll(xt_i, yt_i) + (1/n) sum_ij delta_ij nll(x_i, j)
        + (gamma/n) sum_i (1 - delta_{i, y_i})

is minimized by projected gradient descent with implicit-function
hypergradients. Since the stationarity map factors as
``g = K' h`` with ``h = (P - delta)/n + lam alpha``, the Jacobian is
``d alpha / d delta = (1/n) (dh/dalpha)^-1``; adjoint solves use that
kernel-free form.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from .core import (
    SIMPLEX_TOL,
    Dataset,
    DomainError,
    IllConditionedError,
    OptimizerError,
    TrustedSet,
    one_hot,
)
from .kernel import rbf_kernel_matrix
from .learners import (
    LearnerConfig,
    klr_hessian,
    klr_reduced_jacobian,
    train_klr_weighted,
)

log = logging.getLogger(__name__)


def project_simplex(V) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex (sort-based)."""
    V = np.asarray(V, dtype=float)
    squeeze = V.ndim == 1
    V = np.atleast_2d(V)
    k = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(1, k + 1)
    rho = np.count_nonzero(U - css / ind > 0, axis=1)
    theta = css[np.arange(V.shape[0]), rho - 1] / rho
    out = np.maximum(V - theta[:, None], 0.0)
    return out[0] if squeeze else out


@dataclass(frozen=True)
class KktLinearization:
    """KKT map and its partial derivatives at ``(delta, alpha)``.

    Flattening of ``alpha`` and ``delta`` is row-major over (item, class).
    """

    g_value: np.ndarray  # (n*k,)
    dg_dalpha: np.ndarray  # (n*k, n*k)
    dg_ddelta: np.ndarray  # (n*k, n*k)

    def jacobian(self) -> np.ndarray:
        try:
            cho = linalg.cho_factor(self.dg_dalpha)
        except linalg.LinAlgError as exc:
            raise IllConditionedError("dg/dalpha is not positive definite; regularization too small") from exc
        return -linalg.cho_solve(cho, self.dg_ddelta)


@dataclass
class FitState:
    """Inner model at a given ``delta`` plus the factorization used for adjoints."""

    delta: np.ndarray
    alpha: np.ndarray
    P: np.ndarray
    lse: np.ndarray
    S: np.ndarray
    lu: tuple
    newton_iterations: int


@dataclass(frozen=True)
class GradientTerms:
    trusted: np.ndarray
    explicit: np.ndarray
    implicit: np.ndarray
    sparsity: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.trusted + self.explicit + self.implicit + self.sparsity


class ClassificationProblem:
    """Kernel matrices and inner-solver state for one debug session."""

    def __init__(self, dataset: Dataset, trusted: TrustedSet, config: LearnerConfig,
                 warm_start: str = "linear"):
        if not dataset.is_classification:
            raise DomainError("classification debugger needs a classification dataset")
        trusted.check_against(dataset)
        if warm_start not in ("linear", "previous", "cold"):
            raise DomainError(f"unknown warm start {warm_start!r}")
        self.config = config
        self.warm_start = warm_start
        self.n, self.k, self.m = dataset.n, dataset.n_classes, trusted.m
        self.y = dataset.labels.astype(int)
        self.Y = one_hot(self.y, self.k)
        self.yt = trusted.class_labels()
        self.Yt = one_hot(self.yt, self.k)
        self.c = trusted.confidences
        self.K = rbf_kernel_matrix(dataset.features, dataset.features, config.kernel)
        self.Kt = rbf_kernel_matrix(trusted.features, dataset.features, config.kernel)
        self.newton_iterations = 0
        self.fits = 0

    # inner problem -------------------------------------------------------
    def fit(self, delta, anchor: Optional[FitState] = None, strict: bool = True) -> FitState:
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (self.n, self.k):
            raise DomainError(f"delta must be {(self.n, self.k)}, got {delta.shape}")
        alpha0 = None
        if anchor is not None and self.warm_start != "cold":
            alpha0 = anchor.alpha
            if self.warm_start == "linear":
                alpha0 = self.linearized_alpha(anchor, delta)
        params = train_klr_weighted(self.K, delta, self.config.lam, self.config, alpha0=alpha0,
                                    strict=strict)
        self.newton_iterations += params.iterations
        self.fits += 1
        return self._state(delta, params.alpha, params.iterations)

    def _state(self, delta, alpha, iterations=0) -> FitState:
        S = self.K @ alpha
        lse = logsumexp(S, axis=1)
        P = np.exp(S - lse[:, None])
        D = klr_reduced_jacobian(self.K, P, self.config.lam)
        try:
            lu = linalg.lu_factor(D, check_finite=False)
        except linalg.LinAlgError as exc:
            raise IllConditionedError(f"singular KKT Jacobian: {exc}") from exc
        return FitState(delta, alpha, P, lse, S, lu, iterations)

    def kkt_linearization(self, state: FitState) -> KktLinearization:
        n, k = self.n, self.k
        h = (state.P - state.delta) / n + self.config.lam * state.alpha
        g = (self.K @ h).ravel()
        dg_dalpha = klr_hessian(self.K, state.P, self.config.lam)
        # column (i, j) is -(1/n) K_i in every class-j slot
        dg_ddelta = -np.kron(self.K, np.eye(k)) / n
        return KktLinearization(g, dg_dalpha, dg_ddelta)

    # outer objective -----------------------------------------------------
    def objective(self, state: FitState, gamma: float = 0.0) -> float:
        St = self.Kt @ state.alpha
        nll_t = logsumexp(St, axis=1) - St[np.arange(self.m), self.yt]
        nll = state.lse[:, None] - state.S
        delta = state.delta
        return float(
            np.sum(self.c * nll_t) / self.m
            + np.sum(delta * nll) / self.n
            + gamma / self.n * np.sum(1.0 - delta[np.arange(self.n), self.y])
        )

    def linearized_alpha(self, state: FitState, delta) -> np.ndarray:
        """First-order prediction of the re-trained coefficients at ``delta``."""
        step = linalg.lu_solve(state.lu, (np.asarray(delta) - state.delta).ravel()) / self.n
        return state.alpha + step.reshape(self.n, self.k)

    def linearized_objective(self, state: FitState, delta, gamma: float = 0.0) -> float:
        """Outer objective with the inner model replaced by its linearization."""
        alpha = self.linearized_alpha(state, delta)
        S = self.K @ alpha
        lse = logsumexp(S, axis=1)
        return self.objective(FitState(np.asarray(delta), alpha, None, lse, S, None, 0), gamma)

    def alpha_gradients(self, state: FitState, confidences=None):
        """Gradients in ``alpha`` of the trusted term and of the self-consistency term."""
        c = self.c if confidences is None else np.asarray(confidences, dtype=float)
        Pt = softmax(self.Kt @ state.alpha, axis=1)
        g_trusted = self.Kt.T @ (c[:, None] * (Pt - self.Yt)) / self.m
        g_self = self.K.T @ (state.P - state.delta) / self.n
        return g_trusted, g_self

    def apply_jacobian_t(self, state: FitState, v: np.ndarray) -> np.ndarray:
        w = linalg.lu_solve(state.lu, v.ravel(), trans=1)
        return w.reshape(self.n, self.k) / self.n

    def hypergradient_terms(self, state: FitState, gamma: float = 0.0, confidences=None) -> GradientTerms:
        g_trusted, g_self = self.alpha_gradients(state, confidences)
        nll = state.lse[:, None] - state.S
        return GradientTerms(
            trusted=self.apply_jacobian_t(state, g_trusted),
            explicit=nll / self.n,
            implicit=self.apply_jacobian_t(state, g_self),
            sparsity=-(gamma / self.n) * self.Y,
        )

    def hypergradient(self, state: FitState, gamma: float = 0.0) -> np.ndarray:
        return self.hypergradient_terms(state, gamma).total

    def hypergradient_explicit(self, state: FitState, gamma: float = 0.0) -> np.ndarray:
        """Same gradient with J formed densely from the KKT partials (for checking)."""
        J = self.kkt_linearization(state).jacobian()
        g_trusted, g_self = self.alpha_gradients(state)
        implicit = J.T @ (g_trusted + g_self).ravel()
        nll = state.lse[:, None] - state.S
        return implicit.reshape(self.n, self.k) + nll / self.n - (gamma / self.n) * self.Y


def classification_objective(delta, dataset: Dataset, trusted: TrustedSet, config: LearnerConfig,
                             gamma: float = 0.0) -> float:
    prob = ClassificationProblem(dataset, trusted, config)
    return prob.objective(prob.fit(delta), gamma)


def classification_hypergradient(delta, dataset: Dataset, trusted: TrustedSet, config: LearnerConfig,
                                 gamma: float = 0.0) -> np.ndarray:
    prob = ClassificationProblem(dataset, trusted, config)
    return prob.hypergradient(prob.fit(delta), gamma)


@dataclass
class PgdResult:
    delta: np.ndarray
    state: FitState
    objective: float
    iterations: int
    converged: bool
    objectives: list = field(default_factory=list)


def projected_gradient_descent(problem: ClassificationProblem, delta_init, gamma: float, *,
                               state: Optional[FitState] = None, max_iter: int = 500,
                               tol: float = 1e-6, step0: float = 1.0,
                               max_step: Optional[float] = 1e6,
                               linearized: bool = True, step_rule: str = "bb") -> PgdResult:
    """Minimize the outer objective over row-stochastic ``delta``.

    Every iteration backtracks (halving) from a trial step. The first trial
    is ``step0``; later ones follow ``step_rule``: ``"bb"`` uses the
    Barzilai-Borwein ratio of the last move and gradient change, ``"double"``
    twice the last accepted step, and ``"reset"`` always ``step0``. Trials
    are capped at ``max_step``.

    With ``linearized`` a trial point is judged on the objective of the
    linearized model ``alpha + J (cand - delta)`` and the inner model is
    re-trained only for the accepted point; the step keeps halving if the
    re-trained objective fails to decrease. Without it every trial point is
    re-trained.
    """
    if step_rule not in ("bb", "double", "reset"):
        raise DomainError(f"unknown step rule {step_rule!r}")
    delta = np.asarray(delta_init, dtype=float)
    if delta.min() < -SIMPLEX_TOL or np.max(np.abs(delta.sum(axis=1) - 1)) > SIMPLEX_TOL:
        raise DomainError("delta_init rows must lie on the simplex")
    if state is None or not np.array_equal(state.delta, delta):
        state = problem.fit(delta, anchor=state)
    cap = np.inf if max_step is None else float(max_step)
    F = problem.objective(state, gamma)
    history = [F]
    converged = False
    t = float(step0)
    prev = None  # (delta, gradient) at the previous iterate
    it = 0
    for it in range(1, max_iter + 1):
        G = problem.hypergradient(state, gamma)
        if np.max(np.abs(delta - project_simplex(delta - G))) < tol:
            converged = True
            break
        if step_rule == "reset":
            t = float(step0)
        elif prev is not None:
            if step_rule == "double":
                t = 2.0 * t
            else:
                s_move = delta - prev[0]
                curv = float(np.sum(s_move * (G - prev[1])))
                t = float(np.sum(s_move * s_move)) / curv if curv > 0 else 2.0 * t
        t = min(t, cap)
        accepted = tiny = False
        while t > 1e-12:
            cand = project_simplex(delta - t * G)
            d = cand - delta
            if np.max(np.abs(d)) < tol:
                tiny = True
                break
            bound = F + float(np.sum(G * d)) + float(np.sum(d * d)) / (2.0 * t)
            if linearized and problem.linearized_objective(state, cand, gamma) > bound:
                t *= 0.5
                continue
            try:
                cand_state = problem.fit(cand, anchor=state)
            except (OptimizerError, IllConditionedError) as exc:
                log.debug("inner fit failed on trial step %g: %s", t, exc)
                t *= 0.5
                continue
            F_cand = problem.objective(cand_state, gamma)
            if F_cand <= (F if linearized else bound):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = tiny
            break
        step_inf = float(np.max(np.abs(d)))
        prev = (delta, G)
        delta, state, F = cand, cand_state, F_cand
        history.append(F)
        if step_inf < tol:
            converged = True
            break
    return PgdResult(delta, state, F, it, converged, history)
