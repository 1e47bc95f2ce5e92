"""Continuation driver: sparsity-weight schedule, flag accumulation, ranking and fixes."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .classification import ClassificationProblem, projected_gradient_descent
from .core import (
    Dataset,
    DebugReport,
    DomainError,
    FlagSet,
    IllConditionedError,
    OptimizerError,
    RankedFlag,
    Round,
    TrustedSet,
)
from .learners import LearnerConfig
from .regression import RegressionProblem, solve_weighted_lasso

log = logging.getLogger(__name__)

REGRESSION_FLAG_TOL = 1e-6


@dataclass(frozen=True)
class DriverConfig:
    budget: int
    gamma_floor: Optional[float] = None  # default: gamma0 * 2**-30
    max_rounds: int = 40
    pgd_max_iter: int = 500
    pgd_tol: float = 1e-6
    pgd_step0: float = 1.0
    pgd_max_step: Optional[float] = 1e6
    pgd_step_rule: str = "bb"

    def __post_init__(self):
        if int(self.budget) != self.budget or self.budget < 1:
            raise DomainError(f"budget must be a positive integer, got {self.budget}")
        if self.gamma_floor is not None and not self.gamma_floor > 0:
            raise DomainError("gamma_floor must be positive")
        if self.max_rounds < 1:
            raise DomainError("max_rounds must be at least 1")


def make_problem(dataset: Dataset, trusted: TrustedSet, config: LearnerConfig, **kw):
    if dataset.is_classification:
        return ClassificationProblem(dataset, trusted, config, **kw)
    return RegressionProblem(dataset, trusted, config)


def _gamma0_from_gradient(problem, grad: np.ndarray) -> float:
    n = problem.n
    if isinstance(problem, RegressionProblem):
        # delta = 0 is optimal iff max_i |grad_i| <= gamma / n
        return float(n * np.max(np.abs(grad)))
    # delta = Y is a stationary point of the simplex-constrained problem iff, for
    # every item, no other class has a smaller gradient than the original label
    # once the -gamma/n pull on (i, y_i) is included.
    rows = np.arange(n)
    g_orig = grad[rows, problem.y]
    others = grad.copy()
    others[rows, problem.y] = np.inf
    return float(n * np.max(g_orig - others.min(axis=1)))


def initial_gamma(dataset: Dataset, trusted: TrustedSet, config: LearnerConfig, problem=None) -> float:
    """Smallest sparsity weight at which the unchanged labels are still optimal.

    Any weight strictly below it yields a nontrivial relabeling. A
    non-positive value means the trusted items are already satisfied.
    """
    problem = problem or make_problem(dataset, trusted, config)
    if isinstance(problem, RegressionProblem):
        grad = problem.hypergradient(np.zeros(problem.n), 0.0)
    else:
        grad = problem.hypergradient(problem.fit(problem.Y), 0.0)
    return _gamma0_from_gradient(problem, grad)


def rank_flags(trajectory) -> list:
    """Order the flag union by first appearance, then larger deviation, then index."""
    first = {}
    for rnd in trajectory:
        for i in rnd.flags.indices:
            if i not in first:
                first[i] = (rnd.iteration, rnd.gamma, float(rnd.deviation[i]))
    order = sorted(first, key=lambda i: (first[i][0], -first[i][2], i))
    return [(i,) + first[i] for i in order]


def _deviation(problem, delta) -> np.ndarray:
    if isinstance(problem, RegressionProblem):
        return np.abs(delta)
    return 1.0 - delta[np.arange(problem.n), problem.y]


def _flags(problem, delta) -> np.ndarray:
    if isinstance(problem, RegressionProblem):
        return np.flatnonzero(np.abs(delta) > REGRESSION_FLAG_TOL)
    return np.flatnonzero(np.argmax(delta, axis=1) != problem.y)


def run_duti(dataset: Dataset, trusted: TrustedSet, config: LearnerConfig,
             driver_cfg: DriverConfig, problem=None) -> DebugReport:
    """Halve the sparsity weight until more than ``budget`` items have been flagged."""
    dataset = dataset.without_truth()
    if driver_cfg.budget > dataset.n:
        raise DomainError(f"budget {driver_cfg.budget} exceeds training set size {dataset.n}")
    problem = problem or make_problem(dataset, trusted, config)
    regression = isinstance(problem, RegressionProblem)

    if regression:
        delta = np.zeros(problem.n)
        state = None
        grad0 = problem.hypergradient(delta, 0.0)
    else:
        delta = problem.Y.copy()
        state = problem.fit(delta)
        grad0 = problem.hypergradient(state, 0.0)
    gamma0 = _gamma0_from_gradient(problem, grad0)
    report = DebugReport(dataset.task, dataset.n, dataset.n_classes if not regression else None,
                         gamma0, budget=driver_cfg.budget)
    if not gamma0 > 0:
        report.stop_reason = "nothing to debug"
        return report

    floor = driver_cfg.gamma_floor if driver_cfg.gamma_floor is not None else gamma0 * 2.0 ** -30
    union = set()
    last_flagged = {}
    t = 0
    report.stop_reason = "budget exceeded"
    while len(union) <= driver_cfg.budget:
        if t >= driver_cfg.max_rounds:
            report.stop_reason = "max rounds"
            break
        gamma = gamma0 * 2.0 ** -(t + 1)
        if gamma < floor:
            report.stop_reason = "gamma floor"
            break
        t += 1
        converged, error = True, None
        try:
            if regression:
                delta = solve_weighted_lasso(problem.system, gamma, delta_init=delta)
            else:
                res = projected_gradient_descent(problem, delta, gamma, state=state,
                                                 max_iter=driver_cfg.pgd_max_iter, tol=driver_cfg.pgd_tol,
                                                 step0=driver_cfg.pgd_step0,
                                                 max_step=driver_cfg.pgd_max_step,
                                                 step_rule=driver_cfg.pgd_step_rule)
                delta, state, converged = res.delta, res.state, res.converged
        except (OptimizerError, IllConditionedError) as exc:
            log.warning("round %d (gamma=%g) failed: %s", t, gamma, exc)
            report.trajectory.append(Round(t, gamma, delta.copy(), FlagSet((), t, gamma),
                                           False, str(exc), _deviation(problem, delta)))
            continue
        flags = _flags(problem, delta)
        for i in flags:
            last_flagged[int(i)] = t
        union.update(int(i) for i in flags)
        report.trajectory.append(Round(t, gamma, delta.copy(), FlagSet(tuple(flags), t, gamma),
                                       converged, error, _deviation(problem, delta)))
        log.info("round %d gamma=%.4g flags=%d union=%d", t, gamma, len(flags), len(union))

    deltas = {rnd.iteration: rnd.delta for rnd in report.trajectory}
    y = dataset.labels
    for rank, (i, it, g, dev) in enumerate(rank_flags(report.trajectory), start=1):
        d_last = deltas[last_flagged[i]]
        fix = float(y[i] + d_last[i]) if regression else float(np.argmax(d_last[i]))
        report.ranking.append(RankedFlag(i, rank, it, g, dev, float(y[i]), fix))
    return report
