from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import COST, make_network, random_cost, random_network
from wpbc_game import ja_solve, pa_solve
from wpbc_game.errors import InfeasibleError
from wpbc_game.game import CostModel, LeaderStrategy, follower_best_response, leader_utility
from wpbc_game.schemes import (
    BBCM,
    HTTCM,
    beta_interval,
    build_joint_subproblem,
    default_init,
    equal_split_schedule,
    from_q,
    price_interval,
    solve_beta_step,
    solve_joint_step,
    solve_price_step,
    solve_schedule_step,
    to_q,
)
from wpbc_game.throughput import Schedule

THREE = CostModel(a_m=0.005, b_m=0.001, price_per_bit=1.0, revenue_unit_bits=1e9)


@pytest.fixture(scope="module")
def net3():
    return make_network((1, 1, 1))


@pytest.fixture(scope="module")
def start3(net3):
    return default_init(net3, THREE)


def test_price_step_pure_cost_goes_to_marginal_cost(net3):
    state = LeaderStrategy(THREE.b_m * 3, 0.5, Schedule.zeros(net3))
    assert solve_price_step(state, net3, THREE) == pytest.approx(THREE.b_m, abs=1e-9)


def test_price_step_matches_price_grid(net3, start3):
    p_l = solve_price_step(start3, net3, THREE)
    lo, hi = price_interval(net3, THREE, start3.schedule, start3.beta)
    grid = np.arange(lo, hi, 1e-4 * (THREE.max_price - THREE.b_m))
    best = max(leader_utility(replace(start3, price=p), net3, THREE) for p in grid)
    assert leader_utility(replace(start3, price=p_l), net3, THREE) >= best - 1e-3 * abs(best)


def test_price_step_sits_on_snr_floor_when_decreasing():
    net = make_network((0, 1, 0))
    cost = replace(COST, price_per_bit=1e-6)  # revenue negligible: G decreasing
    state = LeaderStrategy(COST.max_price, 0.5, Schedule([0.5], [], [], []))
    lo, _ = price_interval(net, cost, state.schedule, state.beta)
    assert solve_price_step(state, net, cost) == pytest.approx(lo, rel=1e-9)


def test_beta_step_matches_beta_grid(net3, start3):
    beta = solve_beta_step(start3, net3, THREE)
    p_s = follower_best_response(start3.price, THREE)
    lo, hi = beta_interval(net3, THREE, start3.schedule, p_s)
    best = max(leader_utility(replace(start3, beta=b), net3, THREE)
               for b in np.linspace(lo, hi, 2001))
    assert leader_utility(replace(start3, beta=beta), net3, THREE) >= best - 1e-3 * abs(best)


def test_beta_step_capped_by_energy_capacity():
    net = make_network((1, 0, 0), e_max=1e-6)
    cost = replace(COST, price_per_bit=100.0)
    state = LeaderStrategy(COST.price_for_power(1.0), 0.1, Schedule([], [0.1], [], []))
    p_s = follower_best_response(state.price, cost)
    _, hi = beta_interval(net, cost, state.schedule, p_s)
    a = net.awpd
    assert hi == pytest.approx(a.e_max[0] / (a.phi[0] * a.g_bd[0] * p_s), rel=1e-9)
    assert solve_beta_step(state, net, cost) == pytest.approx(hi, rel=1e-6)


def test_schedule_single_pwpd_takes_whole_period():
    net = make_network((0, 1, 0))
    sched = solve_schedule_step(COST.price_for_power(1.0), 0.4, net, COST)
    assert sched.theta[0] == pytest.approx(0.4, rel=1e-7)


def test_schedule_identical_awpds_share_equally():
    net = make_network((2, 0, 0))
    sched = solve_schedule_step(COST.price_for_power(1.0), 0.3, net, COST)
    assert sched.nu[0] == pytest.approx(sched.nu[1], rel=1e-6)
    assert sched.nu.sum() == pytest.approx(0.7, rel=1e-6)


def schedule_grid_best(net, cost, p_l, beta, step=0.01):
    """Exhaustive schedule grid for one device per kind, straight-line utility."""
    p_s = follower_best_response(p_l, cost)
    A, P, H = net.awpd, net.pwpd, net.hwpd
    pr, ob, od = cost.bit_value, net.env.bandwidth_backscatter, net.env.bandwidth_active
    emit = np.arange(0.0, beta + 1e-12, step)
    sleep = np.arange(0.0, 1.0 - beta + 1e-12, step)
    th, ta = np.meshgrid(emit, emit, indexing="ij")
    nu, mu = np.meshgrid(sleep, sleep, indexing="ij")
    th, ta = th.ravel()[:, None], ta.ravel()[:, None]
    nu, mu = nu.ravel()[None, :], mu.ravel()[None, :]

    def bits(share, energy):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = share * np.log2(1 + energy * A.delta[0] / (A.phi[0] * A.g_bd[0])
                                  / np.where(share > 0, share, 1.0))
        return np.where(share > 0, val, 0.0)

    e_a = A.phi[0] * A.g_bd[0] * beta * p_s
    e_h = H.phi[0] * H.g_bd[0] * (beta - ta) * p_s
    with np.errstate(divide="ignore", invalid="ignore"):
        snr_h = H.delta[0] * np.maximum(beta - ta, 0.0) * p_s / mu
        pt_a = e_a / nu
        pt_h = e_h / mu
        htt_h = np.where(mu > 0, mu * np.log2(1 + snr_h), 0.0)
    rev = (ob * th * np.log2(1 + P.kappa[0] * p_s) + ob * ta * np.log2(1 + H.kappa[0] * p_s)
           + od * bits(nu, e_a) + od * htt_h)
    ok = (th + ta <= beta + 1e-12) & (nu + mu <= 1 - beta + 1e-12)
    ok &= (nu == 0) | ((pt_a >= A.p_min[0]) & (pt_a <= A.p_max[0]))
    ok &= (mu == 0) | ((pt_h >= H.p_min[0]) & (pt_h <= H.p_max[0]))
    ok &= (e_h >= H.e_min[0]) & (e_h <= H.e_max[0])
    ok &= (th == 0) | (P.kappa[0] * p_s >= P.snr_min[0])
    ok &= (ta == 0) | (H.kappa[0] * p_s >= H.snr_min[0])
    return float(np.max(np.where(ok, pr * rev, -np.inf))) - p_l * beta * p_s


@pytest.mark.parametrize("power, beta", [(1.0, 0.3), (2.5, 0.5), (4.0, 0.7)])
def test_schedule_step_matches_grid(net3, power, beta):
    p_l = THREE.price_for_power(power)
    sched = solve_schedule_step(p_l, beta, net3, THREE)
    got = leader_utility(LeaderStrategy(p_l, beta, sched), net3, THREE)
    assert got >= schedule_grid_best(net3, THREE, p_l, beta) - 1e-4


def test_schedule_step_modes(net3):
    p_l = THREE.price_for_power(2.0)
    bb = solve_schedule_step(p_l, 0.5, net3, THREE, BBCM)
    assert bb.active_total == 0.0 and bb.backscatter_total > 0
    ht = solve_schedule_step(p_l, 0.5, net3, THREE, HTTCM)
    assert ht.backscatter_total == 0.0 and ht.active_total > 0


def test_equal_split():
    net = make_network((2, 3, 1))
    s = equal_split_schedule(net, 0.5)
    np.testing.assert_allclose(np.concatenate([s.theta, s.tau]), 0.5 / 4)
    np.testing.assert_allclose(np.concatenate([s.nu, s.mu]), 0.5 / 3)


@pytest.mark.parametrize("solve", [pa_solve, ja_solve])
def test_no_revenue_means_no_trade(net3, solve):
    out = solve(net3, replace(THREE, price_per_bit=0.0))
    assert not out.negotiated
    assert out.u_leader == out.u_follower == out.p_s_star == 0.0


@pytest.mark.parametrize("solve", [pa_solve, ja_solve])
def test_fixed_point_is_idempotent(net3, solve):
    out = solve(net3, THREE)
    again = solve(net3, THREE, init=out.strategy)
    assert again.iterations == 1
    assert again.u_leader == pytest.approx(out.u_leader, abs=1e-9)


@pytest.mark.parametrize("solve", [pa_solve, ja_solve])
def test_infeasible_init_is_an_error(net3, solve):
    bad = LeaderStrategy(THREE.b_m, 0.2, Schedule([0.5], [0.1], [0.1], [0.1]))
    with pytest.raises(InfeasibleError):
        solve(net3, THREE, init=bad)


def test_ja_not_below_pa(net3):
    assert ja_solve(net3, THREE).u_leader >= pa_solve(net3, THREE).u_leader - 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_traces_nondecreasing(seed):
    rng = np.random.default_rng(seed)
    net, cost = random_network(rng, 3, 6), random_cost(rng)
    for out in (pa_solve(net, cost), ja_solve(net, cost)):
        assert np.all(np.diff(out.trace) >= -1e-9)
        assert np.all(np.diff(out.step_trace) >= -1e-9)
        assert out.converged


@given(st.floats(0.0, 10.0), st.floats(1e-6, 100.0), st.floats(0.0, 1.0))
def test_q_substitution(b, margin, beta):
    q1, q2 = to_q(b + margin, beta, b)
    assert 0.0 <= q2 <= q1
    p_l, beta2 = from_q(q1, q2, b)
    assert p_l == pytest.approx(b + margin, rel=1e-12)
    assert beta2 == pytest.approx(beta, abs=1e-12)


def test_joint_start_corners(net3):
    zero = Schedule.zeros(net3)
    prob, _ = build_joint_subproblem(LeaderStrategy(THREE.price_for_power(1.0), 1.0, zero),
                                     net3, THREE)
    assert prob.start[1] == 0.0
    prob, _ = build_joint_subproblem(LeaderStrategy(THREE.b_m, 0.5, zero), net3, THREE)
    np.testing.assert_array_equal(prob.start, [0.0, 0.0])


def test_joint_rejects_overfull_frame(net3):
    state = LeaderStrategy(THREE.price_for_power(1.0), 0.5, Schedule([0.4], [0.4], [0.2], [0.2]))
    with pytest.raises(InfeasibleError):
        build_joint_subproblem(state, net3, THREE)


def test_joint_step_matches_q_grid(net3, start3):
    """The CCCP point is within 1e-3 of the best feasible (q1, q2) grid point."""
    state, res, resid = solve_joint_step(start3, net3, THREE)
    assert np.all(np.diff(res.trace) >= -1e-9) and resid <= 1e-5
    prob, coeffs = build_joint_subproblem(start3, net3, THREE)
    top = 2 * THREE.a_m * THREE.p_s_max
    q = np.linspace(0.0, top, 801)
    best, arg = -np.inf, None
    for q1 in q:
        for q2 in q[q <= q1]:
            v = np.array([q1, q2])
            if prob.constraints.contains(v, tol=1e-12):
                val = prob.value(v)
                if val > best:
                    best, arg = val, v
    assert res.value >= best - 1e-9 * max(1.0, abs(best))
    assert np.max(np.abs(res.x - arg)) <= 1e-3 * top + (q[1] - q[0])
