"""Exhaustive-grid reference optimiser for toy instances.

The grid covers the first leader variable (price, or beacon power for the
fixed-price and welfare problems), the emitting time and one time share per
schedule variable. Shares are taken relative to their period, so that
``theta = beta * f`` and ``nu = (1 - beta) * f`` with ``f`` on
``linspace(0, 1, k)``, and every grid point respects the two period sums by
construction.

With at most one device per kind the utility splits into a theta part, a nu
part and a coupled (tau, mu) part, linked only through the period sums.
The search enumerates every (tau, mu) pair and takes the best admissible
theta and nu by prefix maxima. The result is the exact maximum over the full
Cartesian grid at a fraction of the evaluations; tests check it against
naive enumeration on small grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from wpbc_game.errors import ConfigurationError, DomainError
from wpbc_game.game import (
    CostModel,
    LeaderStrategy,
    check_feasibility,
    fixed_price_utility,
    follower_best_response,
    leader_utility,
    social_welfare,
)
from wpbc_game.throughput import LN2, Network, Schedule

PROBLEMS = ("leader", "fixed-price", "welfare")
GRID_CAP = 10_000_000


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution. Step counts are numbers of points per axis."""

    price_steps: int = 200
    beta_steps: int = 100
    schedule_steps: int = 20
    feasibility_filter: bool = True
    cap: int = GRID_CAP

    def __post_init__(self):
        for name in ("price_steps", "beta_steps", "schedule_steps"):
            if getattr(self, name) < 2:
                raise ConfigurationError(f"{name} must be >= 2")

    def size(self, net: Network) -> int:
        """Number of utility evaluations the search performs."""
        a, p, h = net.counts
        k = self.schedule_steps
        per_cell = (k if p else 1) + (k if a else 1) + (k if h else 1) ** 2
        return self.price_steps * self.beta_steps * per_cell


@dataclass
class OracleResult:
    strategy: LeaderStrategy
    p_s: float
    value: float
    slack: float  # largest utility change to an axis neighbour of the optimum
    evaluated: int
    feasible_cells: int
    negotiated: bool = True
    shares: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


@dataclass
class ImprovementReport:
    best_gain: float
    improving: List[Tuple[str, float]] = field(default_factory=list)
    probes: int = 0

    @property
    def improved(self) -> bool:
        return bool(self.improving)


def _single(kind_arrays, name):
    if len(kind_arrays) > 1:
        raise ConfigurationError(f"oracle supports at most one {name}")
    return len(kind_arrays) == 1


def _objective(problem: str, net: Network, cost: CostModel, fixed_price: Optional[float]):
    """Map the first grid axis to (price, beacon power) and the energy bill."""
    if problem not in PROBLEMS:
        raise DomainError(f"unknown problem {problem!r}")
    k = cost.p_s_max
    if problem == "leader":
        def axis(n):
            prices = np.linspace(cost.b_m, cost.b_m + 2.0 * cost.a_m * k, n)
            return prices, (prices - cost.b_m) / (2.0 * cost.a_m)

        def bill(price, p_s, beta):
            return price * beta * p_s
    elif problem == "fixed-price":
        p_l = cost.b_m + cost.a_m * k if fixed_price is None else fixed_price
        if p_l < cost.b_m:
            raise DomainError("fixed price must be >= b_m")

        def axis(n):
            p_s = np.linspace(0.0, k, n)
            return np.full(n, p_l), p_s

        def bill(price, p_s, beta):
            return price * beta * p_s
    else:
        def axis(n):
            p_s = np.linspace(0.0, k, n)
            return cost.b_m + 2.0 * cost.a_m * p_s, p_s

        def bill(price, p_s, beta):
            return beta * (cost.a_m * p_s ** 2 + cost.b_m * p_s)
    return axis, bill


def _xlog(x, c):
    """x log2(1 + c / x) with value 0 at x = 0 (vectorised, c >= 0)."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = x * np.log1p(c / np.where(x > 0, x, 1.0)) / LN2
    return np.where(x > 0, out, 0.0)


RTOL = 1e-7  # same tolerance as check_feasibility


def _at_least(value, bound, rtol=RTOL):
    """``value >= bound`` up to the tolerance used by check_feasibility."""
    return bound - value <= rtol * np.maximum(np.abs(value), np.abs(bound)) + 1e-15


def _within(value, lo, hi):
    return _at_least(value, lo) & _at_least(hi, value)


def _cell_tables(net, cost, p_s, beta, frac):
    """Per-variable utility tables and feasibility at a block of cells.

    ``p_s`` and ``beta`` have shape (B,), ``frac`` shape (k,). Returns
    (theta_val, nu_val, pair_val, cell_ok) with shapes (B, k), (B, k),
    (B, k, k) and (B,); infeasible entries are -inf.
    """
    A, P, H = net.awpd, net.pwpd, net.hwpd
    pr = cost.bit_value
    ob, od = net.env.bandwidth_backscatter, net.env.bandwidth_active
    B = len(p_s)
    k = len(frac)
    ps = p_s[:, None]
    bt = beta[:, None]
    neg = -np.inf
    cell_ok = np.ones(B, dtype=bool)

    theta_val = np.zeros((B, k))
    if len(P):
        theta = bt * frac[None, :]
        theta_val = pr * ob * theta * np.log1p(P.kappa[0] * ps) / LN2
        snr_ok = _at_least(P.kappa[0] * ps, P.snr_min[0])
        theta_val = np.where((theta > 0) & ~snr_ok, neg, theta_val)

    nu_val = np.zeros((B, k))
    if len(A):
        nu = (1.0 - bt) * frac[None, :]
        e_a = A.phi[0] * A.g_bd[0] * bt * ps
        cell_ok &= _within(e_a[:, 0], A.e_min[0], A.e_max[0])
        nu_val = pr * od * _xlog(nu, A.delta[0] * bt * ps)
        with np.errstate(divide="ignore", invalid="ignore"):
            p_t = np.where(nu > 0, e_a / np.where(nu > 0, nu, 1.0), 0.0)
        ok = (nu == 0) | _within(p_t, A.p_min[0], A.p_max[0])
        nu_val = np.where(ok, nu_val, neg)

    pair_val = np.zeros((B, 1 if not len(H) else k, 1 if not len(H) else k))
    if len(H):
        tau = (bt * frac[None, :])[:, :, None]           # (B, k, 1)
        mu = ((1.0 - bt) * frac[None, :])[:, None, :]    # (B, 1, k)
        ps3 = ps[:, :, None]
        bt3 = bt[:, :, None]
        harvest = np.maximum(bt3 - tau, 0.0)
        e_h = H.phi[0] * H.g_bd[0] * harvest * ps3       # (B, k, 1)
        val = (pr * ob * tau * np.log1p(H.kappa[0] * ps3) / LN2
               + pr * od * _xlog(mu, H.delta[0] * harvest * ps3))
        snr_ok = _at_least(H.kappa[0] * ps3, H.snr_min[0])
        ok = ((tau == 0) | snr_ok) & _within(e_h, H.e_min[0], H.e_max[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            p_t = np.where(mu > 0, e_h / np.where(mu > 0, mu, 1.0), 0.0)
        ok = ok & ((mu == 0) | _within(p_t, H.p_min[0], H.p_max[0]))
        pair_val = np.where(ok, val, neg)
    return theta_val, nu_val, pair_val, cell_ok


def _prefix_best(values):
    """Running maximum along the last axis and the first index attaining it."""
    best = np.maximum.accumulate(values, axis=-1)
    idx = np.zeros(values.shape, dtype=np.int64)
    k = values.shape[-1]
    cur = np.zeros(values.shape[:-1], dtype=np.int64)
    for j in range(1, k):
        cur = np.where(values[..., j] > best[..., j - 1], j, cur)
        idx[..., j] = cur
    return best, idx


def grid_search(problem: str, net: Network, cost: CostModel, spec: GridSpec = GridSpec(),
                fixed_price: Optional[float] = None, chunk: int = 8) -> OracleResult:
    """Best grid point of the leader, fixed-price or welfare problem.

    Ties resolve to the smallest index in the order (first axis, beta, tau
    share, mu share, theta share, nu share). A best value <= 0 is reported
    as the no-trade outcome with value 0.
    """
    a, p, h = net.counts
    _single(net.awpd, "AWPD"), _single(net.pwpd, "PWPD"), _single(net.hwpd, "HWPD")
    size = spec.size(net)
    if size > spec.cap:
        raise ConfigurationError(f"grid of {size} evaluations exceeds cap {spec.cap}")
    axis, bill = _objective(problem, net, cost, fixed_price)
    prices, powers = axis(spec.price_steps)
    betas = np.linspace(0.0, 1.0, spec.beta_steps)
    frac = np.linspace(0.0, 1.0, spec.schedule_steps)
    k = spec.schedule_steps
    kt = k if h else 1
    # theta share index must satisfy j <= k - 1 - i_tau (same for nu / mu)
    limit = (k - 1) - np.arange(kt) if h else np.full(1, k - 1)

    best = (-np.inf, None)
    feasible_cells = 0
    n_b = len(betas)
    for start in range(0, spec.price_steps, chunk):
        sl = slice(start, min(start + chunk, spec.price_steps))
        pr_blk, ps_blk = prices[sl], powers[sl]
        m = len(pr_blk)
        ps = np.repeat(ps_blk, n_b)
        bt = np.tile(betas, m)
        pl = np.repeat(pr_blk, n_b)
        th, nu, pair, ok = _cell_tables(net, cost, ps, bt, frac)
        th_best, th_idx = _prefix_best(th)
        nu_best, nu_idx = _prefix_best(nu)
        if not spec.feasibility_filter:
            ok = np.ones_like(ok)
        # total[c, i_tau, i_mu]
        lim_t = limit if h else np.array([k - 1])
        lim_m = limit if h else np.array([k - 1])
        total = (pair
                 + th_best[:, lim_t][:, :, None]
                 + nu_best[:, lim_m][:, None, :]
                 - bill(pl, ps, bt)[:, None, None])
        total = np.where(ok[:, None, None], total, -np.inf)
        feasible_cells += int(np.sum(np.isfinite(total).any(axis=(1, 2))))
        flat = int(np.argmax(total))
        c, it, im = np.unravel_index(flat, total.shape)
        v = float(total[c, it, im])
        if v > best[0]:
            i_th = int(th_idx[c, lim_t[it]])
            i_nu = int(nu_idx[c, lim_m[im]])
            best = (v, (start + c // n_b, c % n_b, it, im, i_th, i_nu))
    value, idx = best
    if idx is None or not value > 0:
        st = LeaderStrategy(cost.b_m, 0.0, Schedule.zeros(net))
        return OracleResult(st, 0.0, 0.0, 0.0, size, feasible_cells, negotiated=False)
    ip, ib, it, im, ith, inu = idx
    beta = float(betas[ib])
    shares = (float(frac[ith]) if p else 0.0, float(frac[inu]) if a else 0.0,
              float(frac[it]) if h else 0.0, float(frac[im]) if h else 0.0)
    strat = _strategy(net, float(prices[ip]), beta, shares)
    slack = _neighbour_slack(problem, net, cost, fixed_price, prices, powers, betas, frac,
                             (ip, ib, ith, inu, it, im), value)
    return OracleResult(strat, float(powers[ip]), value, slack, size, feasible_cells,
                        True, shares)


def _strategy(net, price, beta, shares):
    a, p, h = net.counts
    f_th, f_nu, f_ta, f_mu = shares
    sched = Schedule(np.full(p, beta * f_th), np.full(a, (1 - beta) * f_nu),
                     np.full(h, beta * f_ta), np.full(h, (1 - beta) * f_mu))
    return LeaderStrategy(price, beta, sched)


def evaluate(problem: str, strategy: LeaderStrategy, p_s: float, net: Network,
             cost: CostModel, fixed_price: Optional[float] = None) -> float:
    """Utility of ``problem`` at a point, or -inf if the point is infeasible."""
    if problem == "leader":
        p_s = follower_best_response(strategy.price, cost)
    if check_feasibility(strategy, net, cost, p_s=p_s):
        return -math.inf
    if problem == "leader":
        return leader_utility(strategy, net, cost)
    if problem == "fixed-price":
        p_l = cost.b_m + cost.a_m * cost.p_s_max if fixed_price is None else fixed_price
        return fixed_price_utility(p_s, strategy.beta, strategy.schedule, p_l, net, cost)
    return social_welfare(p_s, strategy.beta, strategy.schedule, net, cost)


def _neighbour_slack(problem, net, cost, fixed_price, prices, powers, betas, frac,
                     idx, value):
    """Largest utility change between the optimum and its feasible axis
    neighbours: the empirical Lipschitz constant times the grid step."""
    a, p, h = net.counts
    present = [True, True, bool(p), bool(a), bool(h), bool(h)]
    sizes = [len(prices), len(betas), len(frac), len(frac), len(frac), len(frac)]
    worst = 0.0
    for axis_i in range(6):
        if not present[axis_i]:
            continue
        for d in (-1, 1):
            j = list(idx)
            j[axis_i] += d
            if not 0 <= j[axis_i] < sizes[axis_i]:
                continue
            ip, ib, ith, inu, it, im = j
            if frac[ith] + frac[it] > 1 + 1e-12 or frac[inu] + frac[im] > 1 + 1e-12:
                continue
            shares = (frac[ith] if p else 0.0, frac[inu] if a else 0.0,
                      frac[it] if h else 0.0, frac[im] if h else 0.0)
            st = _strategy(net, float(prices[ip]), float(betas[ib]), shares)
            v = evaluate(problem, st, float(powers[ip]), net, cost, fixed_price)
            if np.isfinite(v):
                worst = max(worst, abs(v - value))
    return worst


def local_improvement_check(strategy: LeaderStrategy, problem: str, net: Network,
                            cost: CostModel, step: float = 1e-4, tol: float = 1e-5,
                            p_s: Optional[float] = None,
                            fixed_price: Optional[float] = None) -> ImprovementReport:
    """Probe +-step along each coordinate and along time transfers inside
    each period; report probes that gain more than ``tol``.

    The first coordinate is the price for the leader problem and the beacon
    power otherwise; its probe is ``step`` times its admissible range.
    Infeasible probes are skipped.
    """
    if problem == "leader":
        p_s = follower_best_response(strategy.price, cost)
    elif p_s is None:
        raise DomainError("p_s is required for the fixed-price and welfare problems")
    base = evaluate(problem, strategy, p_s, net, cost, fixed_price)
    if not np.isfinite(base):
        raise DomainError("point is infeasible")
    report = ImprovementReport(best_gain=-math.inf)
    sched = strategy.schedule
    vec = sched.to_vector()
    a, pw, h = net.counts
    emit = list(range(pw)) + list(range(pw + a, pw + a + h))
    sleep = list(range(pw, pw + a)) + list(range(pw + a + h, pw + a + 2 * h))

    def probe(label, st, ps):
        v = evaluate(problem, st, ps, net, cost, fixed_price)
        report.probes += 1
        if np.isfinite(v):
            gain = v - base
            report.best_gain = max(report.best_gain, gain)
            if gain > tol:
                report.improving.append((label, gain))

    for d in (-1.0, 1.0):
        if problem == "leader":
            span = 2.0 * cost.a_m * cost.p_s_max
            price = strategy.price + d * step * span
            if price >= cost.b_m:
                probe(f"price{d:+.0f}", LeaderStrategy(price, strategy.beta, sched), p_s)
        else:
            ps = p_s + d * step * cost.p_s_max
            if 0.0 <= ps <= cost.p_s_max:
                probe(f"power{d:+.0f}", strategy, ps)
        beta = strategy.beta + d * step
        if 0.0 <= beta <= 1.0:
            probe(f"beta{d:+.0f}", LeaderStrategy(strategy.price, beta, sched), p_s)
        for i in range(len(vec)):
            v = vec.copy()
            v[i] += d * step
            if v[i] >= 0.0:
                probe(f"slot{i}{d:+.0f}",
                      LeaderStrategy(strategy.price, strategy.beta, Schedule.from_vector(net, v)), p_s)
    for group in (emit, sleep):
        for i in group:
            for j in group:
                if i == j or vec[i] < step:
                    continue
                v = vec.copy()
                v[i] -= step
                v[j] += step
                probe(f"move{i}->{j}",
                      LeaderStrategy(strategy.price, strategy.beta, Schedule.from_vector(net, v)), p_s)
    if report.best_gain == -math.inf:
        report.best_gain = 0.0
    return report
