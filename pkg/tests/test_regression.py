import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_regression
from duti.bench import gen_sine_regression
from duti.core import Dataset, DomainError, TrustedSet
from duti.driver import initial_gamma
from duti.kernel import KernelConfig
from duti.learners import LearnerConfig
from duti.regression import (
    LassoSystem,
    RegressionProblem,
    regression_hypergradient,
    regression_objective,
    soft_threshold,
    solve_weighted_lasso,
)

CFG = LearnerConfig(lam=0.01, kernel=KernelConfig(0.5))


def test_one_point_blocks_by_hand():
    kappa = 0.3
    # trusted point at the distance giving exp(-d^2 / 2) = kappa
    d = np.sqrt(-2 * np.log(kappa))
    prob = RegressionProblem(Dataset([[0.0]], [0.7]), TrustedSet([[d]], [0.2], [1.0]),
                             LearnerConfig(lam=1.0, kernel=KernelConfig(1.0)))
    np.testing.assert_allclose(prob.system.A, [[kappa / 2]])
    np.testing.assert_allclose(prob.system.B, [[-0.5]])


def test_huge_lambda_decouples(rng):
    ds, tr = random_regression(rng, n=8)
    sys = RegressionProblem(ds, tr, LearnerConfig(lam=1e9, kernel=KernelConfig(0.5))).system
    assert np.max(np.abs(sys.A)) < 1e-8
    np.testing.assert_allclose(sys.B, -np.eye(8), atol=1e-8)
    # the objective separates into (1/n)(y_i + delta_i)^2 + (gamma/n)|delta_i|
    for gamma in (1e-3, 0.5, 2.0 * np.max(np.abs(ds.labels))):
        np.testing.assert_allclose(solve_weighted_lasso(sys, gamma),
                                   -soft_threshold(ds.labels, gamma / 2), atol=1e-6)


def test_consistent_trusted_items_give_zero_residual(rng):
    ds, tr = random_regression(rng, n=6)
    prob = RegressionProblem(ds, tr, CFG)
    # relabel the training set with its own fit until it is a fixed point: y = K alpha(y)
    # holds only for y = 0 when lam > 0, so use zero labels and zero trusted labels
    ds0 = Dataset(ds.features, np.zeros(ds.n))
    tr0 = TrustedSet(tr.features, np.zeros(tr.m), tr.confidences)
    sys = RegressionProblem(ds0, tr0, CFG).system
    assert sys.smooth(np.zeros(ds.n)) == 0.0
    assert prob.system.n == ds.n


def test_scalar_lasso_is_soft_threshold():
    for t in (-2.0, -0.1, 0.0, 0.3, 1.7):
        for g in (0.0, 0.2, 1.0, 5.0):
            sys = LassoSystem.from_blocks([[1.0]], np.zeros((0, 1)), [1.0], [t])
            delta = solve_weighted_lasso(sys, g)  # n = 1 so gamma / n = g
            assert delta[0] == pytest.approx(soft_threshold(t, g / 2), abs=1e-12)


def test_zero_gamma_solves_least_squares(rng):
    A = rng.normal(size=(5, 5)) + 3 * np.eye(5)
    t = rng.normal(size=5)
    sys = LassoSystem.from_blocks(A, np.zeros((0, 5)), np.ones(5), t)
    np.testing.assert_allclose(solve_weighted_lasso(sys, 0.0), np.linalg.solve(A, t), atol=1e-8)


def test_gamma_at_least_gamma0_gives_zero(rng):
    ds, tr = random_regression(rng)
    g0 = initial_gamma(ds, tr, CFG)
    prob = RegressionProblem(ds, tr, CFG)
    assert np.all(solve_weighted_lasso(prob.system, g0) == 0)
    assert np.all(solve_weighted_lasso(prob.system, 3 * g0) == 0)
    assert np.any(solve_weighted_lasso(prob.system, 0.5 * g0) != 0)


def test_negative_gamma_rejected(rng):
    ds, tr = random_regression(rng)
    with pytest.raises(DomainError):
        solve_weighted_lasso(RegressionProblem(ds, tr, CFG).system, -1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 30), st.integers(1, 4), st.floats(0.01, 1.0), st.integers(0, 2 ** 32 - 1))
def test_lasso_objective_equals_bilevel_objective(n, m, frac, seed):
    rng = np.random.default_rng(seed)
    ds, tr = random_regression(rng, n=n, m=m)
    prob = RegressionProblem(ds, tr, CFG)
    gamma = frac * max(initial_gamma(ds, tr, CFG), 1e-3)
    delta = solve_weighted_lasso(prob.system, gamma)
    assert prob.system.optimality_residual(delta, gamma) <= 1e-6
    assert prob.system.objective(delta, gamma) == pytest.approx(prob.objective(delta, gamma), abs=1e-8)


def test_solution_path_is_monotone_and_stationary_on_support():
    c = gen_sine_regression(0)
    cfg = LearnerConfig(lam=1e-3, kernel=KernelConfig(0.2))
    prob = RegressionProblem(c.dataset, c.trusted, cfg)
    g0 = initial_gamma(c.dataset, c.trusted, cfg, prob)
    delta, norms = np.zeros(prob.n), []
    for t in range(1, 12):
        gamma = g0 * 2.0 ** -t
        delta = solve_weighted_lasso(prob.system, gamma, delta_init=delta)
        norms.append(np.sum(np.abs(delta)))
        grad = prob.hypergradient(delta, gamma)
        nz = delta != 0
        assert np.max(np.abs(grad[nz]), initial=0.0) <= 1e-5
        assert np.all(np.abs(grad[~nz]) <= gamma / prob.n + 1e-6)
    assert all(b >= a - 1e-12 for a, b in zip(norms, norms[1:]))


def test_gamma_term_is_scaled_sign(rng):
    ds, tr = random_regression(rng)
    delta = rng.normal(size=ds.n)
    g1 = regression_hypergradient(delta, ds, tr, CFG, 2.5)
    g0 = regression_hypergradient(delta, ds, tr, CFG, 0.0)
    np.testing.assert_allclose(g1 - g0, 2.5 / ds.n * np.sign(delta), atol=1e-12)
    # sgn(0) = 0
    delta[0] = 0.0
    g1 = regression_hypergradient(delta, ds, tr, CFG, 2.5)
    g0 = regression_hypergradient(delta, ds, tr, CFG, 0.0)
    assert g1[0] == g0[0]


def test_gradient_matches_finite_differences(rng):
    ds, tr = random_regression(rng, n=15)
    delta = rng.normal(size=15)
    g = regression_hypergradient(delta, ds, tr, CFG)
    eps = 1e-6
    fd = np.array([(regression_objective(delta + eps * e, ds, tr, CFG)
                    - regression_objective(delta - eps * e, ds, tr, CFG)) / (2 * eps) for e in np.eye(15)])
    assert np.linalg.norm(fd - g) / np.linalg.norm(g) <= 1e-6


def test_gradient_vanishes_when_everything_is_consistent(rng):
    ds, tr = random_regression(rng, n=6)
    ds0 = Dataset(ds.features, np.zeros(6))
    tr0 = TrustedSet(tr.features, np.zeros(tr.m))
    assert np.all(regression_hypergradient(np.zeros(6), ds0, tr0, CFG) == 0)


def test_jacobian_is_the_regularized_inverse(rng):
    ds, tr = random_regression(rng, n=7)
    prob = RegressionProblem(ds, tr, CFG)
    J = prob.jacobian()
    np.testing.assert_allclose(J, np.linalg.inv(prob.K + 7 * CFG.lam * np.eye(7)), atol=1e-9)
    v = rng.normal(size=7)
    np.testing.assert_allclose(prob.apply_jacobian_t(v), J.T @ v, atol=1e-9)
    # KRR is linear in its labels, so the first-order prediction is exact
    d = rng.normal(size=7)
    np.testing.assert_allclose(prob.train(d).alpha - prob.train().alpha, J @ d, atol=1e-9)
