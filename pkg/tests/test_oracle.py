import itertools
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_network
from wpbc_game import ja_solve, pa_solve
from wpbc_game.baselines import solve_social_welfare, stackelberg_welfare
from wpbc_game.errors import ConfigurationError, DomainError
from wpbc_game.game import CostModel, LeaderStrategy
from wpbc_game.oracle import GridSpec, evaluate, grid_search, local_improvement_check
from wpbc_game.schemes import PriceCoefficients, maximize_on_interval, price_interval
from wpbc_game.throughput import Schedule

THREE = CostModel(a_m=0.005, b_m=0.001, price_per_bit=1.0, revenue_unit_bits=1e9)


def naive(problem, net, cost, spec):
    """Plain enumeration of the Cartesian grid in the documented tie order."""
    a, p, h = net.counts
    prices = np.linspace(cost.b_m, cost.max_price, spec.price_steps)
    powers = np.linspace(0.0, cost.p_s_max, spec.price_steps)
    betas = np.linspace(0.0, 1.0, spec.beta_steps)
    frac = np.linspace(0.0, 1.0, spec.schedule_steps)
    ax = lambda present: frac if present else [0.0]
    best, arg = -np.inf, None
    for i in range(spec.price_steps):
        if problem == "leader":
            price, p_s = prices[i], (prices[i] - cost.b_m) / (2 * cost.a_m)
        elif problem == "welfare":
            price, p_s = cost.price_for_power(powers[i]), powers[i]
        else:
            price, p_s = cost.b_m + cost.a_m * cost.p_s_max, powers[i]
        for beta, ft, fm, fth, fnu in itertools.product(betas, ax(h), ax(h), ax(p), ax(a)):
            if fth + ft > 1 + 1e-12 or fnu + fm > 1 + 1e-12:
                continue
            sched = Schedule(np.full(p, beta * fth), np.full(a, (1 - beta) * fnu),
                             np.full(h, beta * ft), np.full(h, (1 - beta) * fm))
            v = evaluate(problem, LeaderStrategy(price, beta, sched), p_s, net, cost)
            if v > best:
                best, arg = v, (price, beta, fth, fnu, ft, fm)
    return best, arg


@pytest.mark.parametrize("problem", ["leader", "fixed-price", "welfare"])
@pytest.mark.parametrize("counts, d", [((1, 1, 1), 3.0), ((1, 1, 1), 8.0), ((1, 0, 1), 5.0),
                                       ((0, 1, 0), 5.0)])
def test_grid_search_equals_naive_enumeration(problem, counts, d):
    net = make_network(counts, d_bd=d)
    spec = GridSpec(5, 6, 4)
    res = grid_search(problem, net, THREE, spec)
    best, arg = naive(problem, net, THREE, spec)
    if best <= 0:
        assert not res.negotiated and res.value == 0.0
        return
    assert res.value == pytest.approx(best, rel=1e-12)
    price, beta, fth, fnu, ft, fm = arg
    assert res.strategy.beta == beta
    assert res.shares == (fth, fnu, ft, fm)
    if problem == "leader":
        assert res.strategy.price == price


def test_empty_feasible_grid_is_no_trade():
    net = make_network((1, 0, 0), e_min=0.5, e_max=1.0)  # unreachable energy floor
    res = grid_search("leader", net, THREE, GridSpec(10, 10, 5))
    assert not res.negotiated and res.value == 0.0 and res.feasible_cells == 0


def test_single_pwpd_price_axis_matches_golden_section():
    net = make_network((0, 1, 0))
    spec = GridSpec(price_steps=2001, beta_steps=2, schedule_steps=2)
    res = grid_search("leader", net, THREE, spec)
    sched = Schedule([1.0], [], [], [])
    coeffs = PriceCoefficients.build(net, THREE, 1.0, sched)
    lo, hi = price_interval(net, THREE, sched, 1.0)
    p_l, _ = maximize_on_interval(coeffs.objective, lo, hi)
    assert res.strategy.beta == 1.0
    assert abs(res.strategy.price - p_l) <= (THREE.max_price - THREE.b_m) / 2000


def test_welfare_grid_dominates_stackelberg_point():
    net = make_network((1, 1, 1))
    ja = ja_solve(net, THREE)
    res = grid_search("welfare", net, THREE, GridSpec(60, 40, 10))
    assert res.value >= stackelberg_welfare(ja, net, THREE) - res.slack


def test_grid_cap_and_kind_limits():
    net = make_network((1, 1, 1))
    with pytest.raises(ConfigurationError):
        grid_search("leader", net, THREE, GridSpec(100, 100, 50, cap=1000))
    with pytest.raises(ConfigurationError):
        grid_search("leader", make_network((2, 1, 1)), THREE, GridSpec(5, 5, 3))
    with pytest.raises(DomainError):
        grid_search("nonsense", net, THREE, GridSpec(5, 5, 3))
    with pytest.raises(ConfigurationError):
        GridSpec(1, 5, 3)


def test_grid_search_is_deterministic():
    net = make_network((1, 1, 1))
    a = grid_search("leader", net, THREE, GridSpec(20, 20, 6))
    b = grid_search("leader", net, THREE, GridSpec(20, 20, 6))
    assert (a.value, a.shares, a.strategy.price, a.slack) == (b.value, b.shares,
                                                                b.strategy.price, b.slack)


def test_no_improvement_at_grid_optimum_with_grid_step():
    net = make_network((0, 1, 0))
    n = 101
    res = grid_search("leader", net, THREE, GridSpec(n, n, 3))
    rep = local_improvement_check(res.strategy, "leader", net, THREE, step=1.0 / (n - 1))
    assert not rep.improved, rep.improving


def test_improvement_found_at_perturbed_point():
    net = make_network((1, 1, 1))
    out = pa_solve(net, THREE)
    st = out.strategy
    worse = replace(st, schedule=Schedule(st.schedule.theta * 0.5, st.schedule.nu,
                                          st.schedule.tau, st.schedule.mu))
    rep = local_improvement_check(worse, "leader", net, THREE, step=1e-3, tol=1e-9)
    assert rep.improved and rep.best_gain > 0


@pytest.mark.parametrize("solve", [pa_solve, ja_solve])
def test_no_improvement_at_solver_output(solve):
    net = make_network((1, 1, 1))
    out = solve(net, THREE)
    rep = local_improvement_check(out.strategy, "leader", net, THREE)
    assert not rep.improved and rep.probes > 0


def test_local_check_needs_power_for_other_problems():
    net = make_network((1, 1, 1))
    w = solve_social_welfare(net, THREE)
    with pytest.raises(DomainError):
        local_improvement_check(w.strategy, "welfare", net, THREE)
    rep = local_improvement_check(w.strategy, "welfare", net, THREE, p_s=w.p_s_star)
    assert not rep.improved
