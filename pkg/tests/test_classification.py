import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_classification, random_simplex_rows
from duti.bench import gen_harry_potter
from duti.classification import ClassificationProblem, project_simplex, projected_gradient_descent
from duti.core import CLASSIFICATION, Dataset, DomainError, TrustedSet
from duti.driver import DriverConfig, initial_gamma, run_duti
from duti.kernel import KernelConfig
from duti.learners import LearnerConfig, klr_kkt_residual

CFG = LearnerConfig(lam=0.05, kernel=KernelConfig(0.7), newton_tol=1e-12)


# ---------------------------------------------------------------- projection

def test_projection_example():
    np.testing.assert_allclose(project_simplex([0.5, 0.7, 0.9]), [2 / 15, 5 / 15, 8 / 15], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_projection_properties(n, k, seed):
    rng = np.random.default_rng(seed)
    V = 3 * rng.normal(size=(n, k))
    P = project_simplex(V)
    assert P.min() >= 0
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    # optimality: v - p is constant on the support and no larger off it
    for v, p in zip(V, P):
        r = v - p
        s = p > 0
        assert np.ptp(r[s]) <= 1e-12
        assert np.all(r[~s] <= r[s].max() + 1e-12)
    np.testing.assert_allclose(project_simplex(P), P, atol=1e-12)


# ---------------------------------------------------------------- objective and gradient

def test_gamma_term_of_objective(rng):
    ds, tr = random_classification(rng)
    prob = ClassificationProblem(ds, tr, CFG)
    st0 = prob.fit(prob.Y)
    assert prob.objective(st0, 3.0) == pytest.approx(prob.objective(st0, 0.0), abs=1e-12)
    U = np.full((ds.n, 3), 1 / 3)
    su = prob.fit(U)
    assert prob.objective(su, 3.0) - prob.objective(su, 0.0) == pytest.approx(3.0 * (1 - 1 / 3), abs=1e-12)


def test_gamma_term_of_gradient(rng):
    ds, tr = random_classification(rng)
    prob = ClassificationProblem(ds, tr, CFG)
    s = prob.fit(random_simplex_rows(rng, ds.n, 3))
    diff = prob.hypergradient(s, 2.0) - prob.hypergradient(s, 0.0)
    expect = np.zeros((ds.n, 3))
    expect[np.arange(ds.n), prob.y] = -2.0 / ds.n
    np.testing.assert_allclose(diff, expect, atol=1e-14)


def test_gradient_matches_finite_differences(rng):
    ds, tr = random_classification(rng, n=8, k=3)
    prob = ClassificationProblem(ds, tr, CFG, warm_start="cold")
    delta = random_simplex_rows(rng, 8, 3)
    g = prob.hypergradient(prob.fit(delta), 0.0)
    eps = 1e-5
    fd = np.zeros_like(delta)
    for idx in np.ndindex(delta.shape):
        e = np.zeros_like(delta)
        e[idx] = eps
        fp = prob.objective(prob.fit(delta + e, strict=False))
        fm = prob.objective(prob.fit(delta - e, strict=False))
        fd[idx] = (fp - fm) / (2 * eps)
    assert np.linalg.norm(fd - g) / np.linalg.norm(g) <= 1e-4


def test_symmetric_instance_gives_mirrored_gradient():
    # mirror image x -> -x swaps the classes of both training and trusted items
    ds = Dataset([[-1.0], [1.0]], [0, 1], CLASSIFICATION, 2)
    tr = TrustedSet([[-0.4], [0.4]], [1, 0], [2.0, 2.0])
    prob = ClassificationProblem(ds, tr, CFG)
    G = prob.hypergradient(prob.fit(np.array([[0.8, 0.2], [0.2, 0.8]])), 0.5)
    np.testing.assert_allclose(G[0], G[1][::-1], atol=1e-12)


def test_adjoint_equals_explicit_jacobian(rng):
    ds, tr = random_classification(rng, n=12, k=4)
    prob = ClassificationProblem(ds, tr, LearnerConfig(lam=0.01, kernel=KernelConfig(0.6)))
    s = prob.fit(random_simplex_rows(rng, 12, 4))
    np.testing.assert_allclose(prob.hypergradient(s, 1.5), prob.hypergradient_explicit(s, 1.5), atol=1e-8)


def test_jacobian_first_order_remainder(rng):
    ds, tr = random_classification(rng, n=8, k=3)
    prob = ClassificationProblem(ds, tr, CFG, warm_start="cold")
    delta = random_simplex_rows(rng, 8, 3)
    s = prob.fit(delta)
    J = prob.kkt_linearization(s).jacobian()
    v = rng.normal(size=delta.shape)
    v -= v.mean(axis=1, keepdims=True)
    errs = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        a = prob.fit(delta + eps * v).alpha.ravel()
        errs.append(np.linalg.norm(a - s.alpha.ravel() - eps * J @ v.ravel()))
    # halving eps quarters the remainder
    for r in np.array(errs[:-1]) / np.array(errs[1:]):
        assert 3.6 < r < 4.4


# ---------------------------------------------------------------- projected gradient descent

def test_pgd_rejects_infeasible_start(rng):
    ds, tr = random_classification(rng)
    prob = ClassificationProblem(ds, tr, CFG)
    with pytest.raises(DomainError):
        projected_gradient_descent(prob, np.full((ds.n, 3), 0.5), 1.0)


def test_pgd_fixpoint_above_gamma0(rng):
    ds, tr = random_classification(rng)
    g0 = initial_gamma(ds, tr, CFG)
    prob = ClassificationProblem(ds, tr, CFG)
    res = projected_gradient_descent(prob, prob.Y, 10 * g0)
    assert res.converged
    np.testing.assert_array_equal(res.delta, prob.Y)


@pytest.mark.parametrize("rule", ["bb", "double", "reset"])
def test_pgd_descends_and_stays_feasible(rng, rule):
    ds, tr = random_classification(rng, n=15, k=3)
    cfg = LearnerConfig(lam=0.01, kernel=KernelConfig(0.5))
    g0 = initial_gamma(ds, tr, cfg)
    prob = ClassificationProblem(ds, tr, cfg)
    res = projected_gradient_descent(prob, prob.Y, 0.25 * g0, step_rule=rule)
    objs = res.objectives
    assert all(b <= a for a, b in zip(objs, objs[1:]))
    assert len(objs) > 1
    assert res.delta.min() >= -1e-9
    np.testing.assert_allclose(res.delta.sum(axis=1), 1.0, atol=1e-9)
    # the inner model is re-trained (not extrapolated) at the returned point
    assert np.max(np.abs(klr_kkt_residual(prob.K, res.delta, res.state.alpha, cfg.lam))) <= cfg.newton_tol
    # a cold refit lands elsewhere inside the Newton tolerance
    assert prob.objective(prob.fit(res.delta), 0.25 * g0) == pytest.approx(res.objective, abs=1e-6)


def test_linear_warm_start_saves_newton_steps():
    c = gen_harry_potter(0)
    cfg = LearnerConfig(lam=1e-3, kernel=KernelConfig(0.3))
    counts, ranks = {}, {}
    for mode in ("linear", "cold"):
        prob = ClassificationProblem(c.dataset, c.trusted, cfg, warm_start=mode)
        rep = run_duti(c.dataset, c.trusted, cfg, DriverConfig(budget=12), problem=prob)
        counts[mode], ranks[mode] = prob.newton_iterations, rep.ranked_indices
    assert counts["linear"] < counts["cold"]
    assert set(ranks["linear"][:12]) == set(ranks["cold"][:12])
