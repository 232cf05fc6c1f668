import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wpbc_game.errors import DomainError, InfeasibleError, SolverError
from wpbc_game.solvers import (
    DcProblem,
    LinearConstraintSet,
    ScalarProblem,
    cccp_solve,
    concave_max_linear,
    golden_iteration_bound,
    golden_section_max,
    stationarity_residual,
)


def test_golden_parabola_vertex():
    x, fx = golden_section_max(ScalarProblem(lambda x: -(x - 2.0) ** 2, 0.0, 5.0, 1e-8))
    assert x == pytest.approx(2.0, abs=1e-7) and fx == pytest.approx(0.0, abs=1e-14)


def test_golden_boundary_maximum():
    assert golden_section_max(ScalarProblem(lambda x: x, 0.0, 1.0))[0] == 1.0
    assert golden_section_max(ScalarProblem(lambda x: -x, 0.0, 1.0))[0] == 0.0


def test_golden_ties_go_low():
    assert golden_section_max(ScalarProblem(lambda x: 1.0, 0.3, 0.9))[0] == 0.3


def test_golden_degenerate_interval():
    assert golden_section_max(ScalarProblem(lambda x: x, 1.0, 1.0)) == (1.0, 1.0)


def test_scalar_problem_validation():
    with pytest.raises(DomainError):
        ScalarProblem(lambda x: x, 1.0, 0.0)
    with pytest.raises(DomainError):
        ScalarProblem(lambda x: x, 0.0, 1.0, 0.0)


def test_golden_all_nonfinite():
    with pytest.raises(SolverError):
        golden_section_max(ScalarProblem(lambda x: -math.inf, 0.0, 1.0))


@given(st.floats(-10, 10), st.floats(1e-3, 20), st.floats(1e-10, 1e-3), st.floats(0, 1))
def test_golden_iteration_count(lo, width, tol, peak):
    calls = []

    def f(x):
        calls.append(x)
        return -(x - (lo + peak * width)) ** 2

    golden_section_max(ScalarProblem(f, lo, lo + width, tol))
    # two interior probes, one per contraction, three final candidates
    assert len(calls) - 5 <= golden_iteration_bound(lo, lo + width, tol)


def simplex(n):
    return LinearConstraintSet(np.ones((1, n)), [1.0], np.zeros(n), np.full(n, np.inf))


def test_barrier_vertex_optimum_with_zero_gradient():
    # the gradient vanishes at the optimum, so the barrier locates x only to
    # about sqrt(m / t) while the objective is exact to m / t
    res = concave_max_linear(lambda x: -x @ x, lambda x: -2 * x, lambda x: -2 * np.eye(3),
                             simplex(3))
    np.testing.assert_allclose(res.x, 0.0, atol=1e-5)
    assert res.value >= -1e-9


@pytest.mark.parametrize("n", [1, 2, 5])
def test_barrier_symmetric_logs(n):
    res = concave_max_linear(lambda x: np.sum(np.log1p(x)), lambda x: 1 / (1 + x),
                             lambda x: np.diag(-1 / (1 + x) ** 2), simplex(n))
    np.testing.assert_allclose(res.x, 1.0 / n, atol=1e-6)


def test_barrier_empty_polytope():
    cons = LinearConstraintSet(np.array([[1.0, 1.0]]), [-1.0], [0.0, 0.0], [np.inf, np.inf])
    with pytest.raises(InfeasibleError):
        concave_max_linear(lambda x: 0.0, lambda x: np.zeros(2), lambda x: np.zeros((2, 2)), cons)


def test_barrier_implicit_equality():
    # x1 + x2 <= 1 and x1 + x2 >= 1 pin the sum; the optimum splits evenly
    cons = LinearConstraintSet(np.array([[1.0, 1.0], [-1.0, -1.0]]), [1.0, -1.0],
                               [0.0, 0.0], [np.inf, np.inf])
    res = concave_max_linear(lambda x: np.sum(np.log1p(x)), lambda x: 1 / (1 + x),
                             lambda x: np.diag(-1 / (1 + x) ** 2), cons)
    np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3), st.floats(0.2, 3.0))
def test_barrier_matches_projection(c, budget):
    """max -||x - c||^2 on {x >= 0, sum x <= budget} is a simplex projection."""
    c = np.array(c)
    cons = LinearConstraintSet(np.ones((1, 3)), [budget], np.zeros(3), np.full(3, np.inf))
    res = concave_max_linear(lambda x: -np.sum((x - c) ** 2), lambda x: -2 * (x - c),
                             lambda x: -2 * np.eye(3), cons)
    want = np.maximum(c, 0.0)
    if want.sum() > budget:
        u = np.sort(c)[::-1]
        css = np.cumsum(u) - budget
        k = np.max(np.flatnonzero(u - css / np.arange(1, 4) > 0)) + 1
        want = np.maximum(c - css[k - 1] / k, 0.0)
    np.testing.assert_allclose(res.x, want, atol=1e-5)
    assert res.value >= -np.sum((want - c) ** 2) - 1e-8


def box(lo, hi):
    return LinearConstraintSet(np.zeros((0, 1)), [], [lo], [hi])


def test_cccp_without_convex_part():
    cons = simplex(2)
    f = lambda x: np.sum(np.log1p(x))
    g = lambda x: 1 / (1 + x)
    h = lambda x: np.diag(-1 / (1 + x) ** 2)
    prob = DcProblem(f, g, h, lambda x: 0.0, lambda x: np.zeros(2), cons, [0.1, 0.1])
    res = cccp_solve(prob)
    direct = concave_max_linear(f, g, h, cons, start=[0.1, 0.1])
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, direct.x, atol=1e-9)


def test_cccp_one_dimensional_dc():
    prob = DcProblem(lambda x: -x[0] ** 2, lambda x: np.array([-2 * x[0]]),
                     lambda x: np.array([[-2.0]]), lambda x: 0.5 * x[0] ** 2,
                     lambda x: np.array([x[0]]), box(-1.0, 1.0), [1.0], tolerance=1e-12)
    res = cccp_solve(prob)
    assert abs(res.x[0]) < 1e-4
    assert np.all(np.diff(res.trace) >= -1e-12)


def test_cccp_rejects_infeasible_start():
    with pytest.raises(InfeasibleError):
        DcProblem(lambda x: 0.0, lambda x: np.zeros(1), lambda x: np.zeros((1, 1)),
                  lambda x: 0.0, lambda x: np.zeros(1), box(0.0, 1.0), [2.0])


def test_stationarity_residual():
    cons = box(0.0, 1.0)
    # upper bound active, gradient pushing outward: stationary
    assert stationarity_residual(np.array([1.0]), cons, np.array([1.0]))[0] == pytest.approx(0.0)
    # interior point with a nonzero gradient: not stationary
    assert stationarity_residual(np.array([1.0]), cons, np.array([0.5]))[0] == pytest.approx(1.0)
    # active bound but gradient pointing inward: not stationary
    assert stationarity_residual(np.array([-1.0]), cons, np.array([1.0]))[0] > 0.5


def test_constraint_set_validation():
    with pytest.raises(InfeasibleError):
        LinearConstraintSet(np.zeros((0, 1)), [], [1.0], [0.0])
    with pytest.raises(DomainError):
        LinearConstraintSet(np.ones((2, 2)), [1.0], [0.0, 0.0], [1.0, 1.0])
    cons = simplex(2)
    assert cons.contains([0.5, 0.5]) and not cons.contains([0.8, 0.8])
    assert cons.violation([0.8, 0.8]) == pytest.approx(0.6)
