"""Equilibrium-finding schemes for the leader's problem.

PA cycles three exact block maximisations (price, emitting time, schedule);
JA replaces the first two with a joint (price, emitting time) step solved by
the convex-concave procedure in the variables

    q1 = (p_l - b_m)(1 + beta) / 2,   q2 = (p_l - b_m)(1 - beta) / 2,

which turn the bilinear energy bill into a difference of convex quadratics.

Both schemes add guarded moves between the block steps: a beta step that
rescales the slots with the emitting period, a joint (beta, energy) step at
fixed slot shares, which is concave, and a release step that drops
backscatter slots whose SNR floor pins the beacon power. These cover
points where the literal blocks all stall although a better point is one
coordinated move away.

Every step keeps the incumbent when the new block value would be lower, so
the utility trace is nondecreasing even with inexact inner solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from wpbc_game.errors import InfeasibleError, SolverError
from wpbc_game.game import (
    CostModel,
    GameOutcome,
    LeaderStrategy,
    check_feasibility,
    follower_best_response,
    follower_utility,
    leader_utility,
)
from wpbc_game.solvers import (
    DcProblem,
    LinearConstraintSet,
    ScalarProblem,
    cccp_solve,
    concave_max_linear,
    golden_section_max,
    stationarity_residual,
)
from wpbc_game.throughput import LN2, Network, Schedule, xlog_grad, xlog_hess, xlog_term

MAX_OUTER_ITER = 500
XI1 = 1e-6
XI2 = 1e-8
BETA0 = 0.5
FRAME_SNAP = 1e-7


@dataclass(frozen=True)
class Mode:
    """Which transmission types the schedule may use."""

    name: str = "full"
    backscatter: bool = True
    active: bool = True


FULL = Mode()
BBCM = Mode("bbcm", backscatter=True, active=False)
HTTCM = Mode("httcm", backscatter=False, active=True)


# ----------------------------------------------------------------------------
# scalar feasibility windows


def _window(coef, lo, hi):
    """Range of ``x`` with ``lo <= coef * x <= hi`` for every row (coef >= 0)."""
    coef = np.atleast_1d(np.asarray(coef, dtype=float))
    lo = np.broadcast_to(np.asarray(lo, dtype=float), coef.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), coef.shape)
    x_lo, x_hi = -math.inf, math.inf
    pos = coef > 0
    if np.any(pos):
        x_lo = float(np.max(lo[pos] / coef[pos]))
        x_hi = float(np.min(hi[pos] / coef[pos]))
    zero = ~pos
    if np.any(zero) and (np.any(lo[zero] > 0) or np.any(hi[zero] < 0)):
        return math.inf, -math.inf
    return x_lo, x_hi


def _intersect(*ranges):
    lo = max(r[0] for r in ranges)
    hi = min(r[1] for r in ranges)
    return lo, hi


def power_interval(net: Network, cost: CostModel, sched: Schedule, beta: float):
    """Beacon powers satisfying the power, energy and SNR constraints at
    fixed ``(beta, schedule)``. Empty when ``lo > hi``."""
    A, P, H = net.awpd, net.pwpd, net.hwpd
    ranges = [(0.0, cost.p_s_max)]
    on = sched.nu > 0
    if np.any(on):
        ranges.append(_window(A.phi[on] * A.g_bd[on] * beta / sched.nu[on],
                              A.p_min[on], A.p_max[on]))
    if len(A):
        ranges.append(_window(A.phi * A.g_bd * beta, A.e_min, A.e_max))
    y = np.maximum(beta - sched.tau, 0.0)
    on = sched.mu > 0
    if np.any(on):
        ranges.append(_window(H.phi[on] * H.g_bd[on] * y[on] / sched.mu[on],
                              H.p_min[on], H.p_max[on]))
    if len(H):
        ranges.append(_window(H.phi * H.g_bd * y, H.e_min, H.e_max))
    on = sched.theta > 0
    if np.any(on):
        ranges.append(_window(P.kappa[on], P.snr_min[on], math.inf))
    on = sched.tau > 0
    if np.any(on):
        ranges.append(_window(H.kappa[on], H.snr_min[on], math.inf))
    return _intersect(*ranges)


def price_interval(net: Network, cost: CostModel, sched: Schedule, beta: float):
    lo, hi = power_interval(net, cost, sched, beta)
    return cost.b_m + 2.0 * cost.a_m * lo, cost.b_m + 2.0 * cost.a_m * hi


def beta_interval(net: Network, cost: CostModel, sched: Schedule, p_s: float):
    """Emitting times compatible with the schedule's two periods and the
    power/energy windows at fixed beacon power."""
    A, H = net.awpd, net.hwpd
    ranges = [(0.0, 1.0), (sched.backscatter_total, 1.0 - sched.active_total)]
    if len(H):
        ranges.append((float(sched.tau.max()), math.inf))
    on = sched.nu > 0
    if np.any(on):
        ranges.append(_window(A.phi[on] * A.g_bd[on] * p_s / sched.nu[on],
                              A.p_min[on], A.p_max[on]))
    if len(A):
        ranges.append(_window(A.phi * A.g_bd * p_s, A.e_min, A.e_max))
    # hybrid rows are windows on (beta - tau_h)
    for j in range(len(H)):
        k = H.phi[j] * H.g_bd[j] * p_s
        rows = [(k, H.e_min[j], H.e_max[j])]
        if sched.mu[j] > 0:
            rows.append((k / sched.mu[j], H.p_min[j], H.p_max[j]))
        for c, lo, hi in rows:
            y_lo, y_hi = _window(c, lo, hi)
            ranges.append((sched.tau[j] + y_lo, sched.tau[j] + y_hi))
    return _intersect(*ranges)


def _scalar_tol(lo, hi):
    return max(1e-13 * max(1.0, abs(lo), abs(hi)), 1e-10 * (hi - lo), 1e-300)


def maximize_on_interval(f, lo, hi, incumbent=None):
    """Golden-section maximum of a concave ``f`` on ``[lo, hi]``.

    The incumbent is kept when it is feasible and strictly better, which
    makes every block step monotone; flat objectives resolve to ``lo``.
    """
    if lo > hi:
        # windows built from a point on a constraint boundary can cross by
        # rounding; treat a crossing that small as a single point
        if lo - hi > 1e-9 * max(1.0, abs(lo), abs(hi)):
            raise InfeasibleError(f"empty interval [{lo:.6g}, {hi:.6g}]")
        mid = 0.5 * (lo + hi)
        return mid, f(mid)
    x, fx = golden_section_max(ScalarProblem(f, lo, hi, _scalar_tol(lo, hi)))
    if incumbent is not None:
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if lo - slack <= incumbent <= hi + slack:
            inc = min(max(incumbent, lo), hi)
            f_inc = f(inc)
            if f_inc > fx:
                return inc, f_inc
    return x, fx


# ----------------------------------------------------------------------------
# coefficient tables


def _log_terms(w, c, x):
    """sum_i w_i log2(1 + c_i x) with silent rows (w_i == 0) skipped."""
    on = w != 0
    if not np.any(on):
        return 0.0
    return float(np.sum(w[on] * np.log1p(c[on] * x)) / LN2)


def _ratio(num, den):
    """num/den with 0 where den == 0 (silent device)."""
    den = np.asarray(den, dtype=float)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


@dataclass(frozen=True)
class PriceCoefficients:
    """Coefficients of the price subproblem at fixed ``(beta, schedule)``."""

    c_p1: np.ndarray
    c_p2: np.ndarray
    c_a3: np.ndarray
    c_a4: np.ndarray
    c_h5: np.ndarray
    c_h6: np.ndarray
    c_h7: np.ndarray
    c_h8: np.ndarray
    r_a1: np.ndarray
    r_h2: np.ndarray
    beta: float
    a_m: float
    b_m: float

    @classmethod
    def build(cls, net: Network, cost: CostModel, beta: float, sched: Schedule):
        A, P, H = net.awpd, net.pwpd, net.hwpd
        pr, a = cost.bit_value, cost.a_m
        ob, od = net.env.bandwidth_backscatter, net.env.bandwidth_active
        zeta = net.env.performance_gap
        c_a4 = _ratio(A.delta * beta, 2.0 * a * sched.nu)
        c_h8 = _ratio(H.delta * (beta - sched.tau), 2.0 * a * sched.mu)
        return cls(
            c_p1=pr * ob * sched.theta,
            c_p2=P.kappa / (2.0 * a),
            c_a3=pr * od * sched.nu,
            c_a4=c_a4,
            c_h5=pr * ob * sched.tau,
            c_h6=H.kappa / (2.0 * a),
            c_h7=pr * od * sched.mu,
            c_h8=c_h8,
            r_a1=c_a4 * A.noise / (zeta * A.g_dg),
            r_h2=c_h8 * H.noise / (zeta * H.g_dg),
            beta=beta, a_m=a, b_m=cost.b_m,
        )

    def objective(self, p_l: float) -> float:
        x = p_l - self.b_m
        return (_log_terms(self.c_p1, self.c_p2, x) + _log_terms(self.c_a3, self.c_a4, x)
                + _log_terms(self.c_h5, self.c_h6, x) + _log_terms(self.c_h7, self.c_h8, x)
                - self.beta * p_l * x / (2.0 * self.a_m))


@dataclass(frozen=True)
class BetaCoefficients:
    """Coefficients of the emitting-time subproblem at fixed ``(p_l, schedule)``."""

    c_a1: np.ndarray
    c_a2: np.ndarray
    c_h3: np.ndarray
    c_h4: np.ndarray
    c_h5: np.ndarray
    c_6: float
    constant: float
    r_a1: np.ndarray
    r_h2: np.ndarray

    @classmethod
    def build(cls, net: Network, cost: CostModel, p_l: float, sched: Schedule):
        A, P, H = net.awpd, net.pwpd, net.hwpd
        pr, a = cost.bit_value, cost.a_m
        ob, od = net.env.bandwidth_backscatter, net.env.bandwidth_active
        zeta = net.env.performance_gap
        x = p_l - cost.b_m
        c_a2 = _ratio(A.delta * x, 2.0 * a * sched.nu)
        c_h4 = _ratio(H.delta * x, 2.0 * a * sched.mu)
        p_s = x / (2.0 * a)
        const = pr * ob * (np.dot(sched.theta, np.log1p(P.kappa * p_s))
                           + np.dot(sched.tau, np.log1p(H.kappa * p_s))) / LN2
        return cls(
            c_a1=pr * od * sched.nu,
            c_a2=c_a2,
            c_h3=pr * od * sched.mu,
            c_h4=c_h4,
            c_h5=sched.tau.copy(),
            c_6=p_l * x / (2.0 * a),
            constant=float(const),
            r_a1=c_a2 * A.noise / (zeta * A.g_dg),
            r_h2=c_h4 * H.noise / (zeta * H.g_dg),
        )

    def objective(self, beta: float) -> float:
        val = _log_terms(self.c_a1, self.c_a2, beta)
        on = self.c_h3 != 0
        if np.any(on):
            val += float(np.sum(self.c_h3[on] * np.log1p(
                self.c_h4[on] * np.maximum(beta - self.c_h5[on], 0.0))) / LN2)
        return val - self.c_6 * beta + self.constant


@dataclass(frozen=True)
class ScheduleCoefficients:
    """Coefficients of the (concave) schedule subproblem at fixed ``(p_s, beta)``.

    ``constant`` carries the energy bill, so :meth:`objective` equals the
    caller's utility at the same point.
    """

    c_p1: np.ndarray
    c_a2: np.ndarray
    c_h3: np.ndarray
    c_h4: np.ndarray
    c_h5: np.ndarray
    k_active: float  # bit value times active bandwidth
    constant: float
    sizes: tuple

    @classmethod
    def build(cls, net: Network, cost: CostModel, p_s: float, beta: float,
              constant: float = 0.0):
        A, P, H = net.awpd, net.pwpd, net.hwpd
        pr = cost.bit_value
        ob, od = net.env.bandwidth_backscatter, net.env.bandwidth_active
        return cls(
            c_p1=pr * ob * np.log1p(P.kappa * p_s) / LN2,
            c_a2=A.delta * beta * p_s,
            c_h3=pr * ob * np.log1p(H.kappa * p_s) / LN2,
            c_h4=H.delta * beta * p_s,
            c_h5=H.delta * p_s,
            k_active=pr * od,
            constant=constant,
            sizes=net.counts,
        )

    @classmethod
    def for_leader(cls, net, cost, p_l, beta):
        p_s = follower_best_response(p_l, cost)
        return cls.build(net, cost, p_s, beta, constant=-p_l * beta * p_s)

    def _split(self, v):
        a, p, h = self.sizes
        return v[:p], v[p:p + a], v[p + a:p + a + h], v[p + a + h:]

    def objective(self, v) -> float:
        theta, nu, tau, mu = self._split(np.asarray(v, dtype=float))
        u = np.maximum(self.c_h4 - self.c_h5 * tau, 0.0)
        return float(np.dot(self.c_p1, theta) + np.dot(self.c_h3, tau)
                     + self.k_active * (np.sum(xlog_term(nu, self.c_a2))
                                        + np.sum(xlog_term(mu, u)))
                     + self.constant)

    def gradient(self, v):
        theta, nu, tau, mu = self._split(np.asarray(v, dtype=float))
        u = np.maximum(self.c_h4 - self.c_h5 * tau, 0.0)
        dnu, _ = xlog_grad(nu, self.c_a2)
        dmu, du = xlog_grad(mu, u)
        return np.concatenate([
            self.c_p1,
            self.k_active * dnu,
            self.c_h3 - self.k_active * du * self.c_h5,
            self.k_active * dmu,
        ])

    def hessian(self, v):
        a, p, h = self.sizes
        theta, nu, tau, mu = self._split(np.asarray(v, dtype=float))
        u = np.maximum(self.c_h4 - self.c_h5 * tau, 0.0)
        n = p + a + 2 * h
        H = np.zeros((n, n))
        dxx, _, _ = xlog_hess(nu, self.c_a2)
        ia = np.arange(p, p + a)
        H[ia, ia] = self.k_active * dxx
        mxx, mxc, mcc = xlog_hess(mu, u)
        it = np.arange(p + a, p + a + h)
        im = np.arange(p + a + h, n)
        H[it, it] = self.k_active * mcc * self.c_h5 ** 2
        H[im, im] = self.k_active * mxx
        H[it, im] = H[im, it] = -self.k_active * mxc * self.c_h5
        return H


# ----------------------------------------------------------------------------
# schedule step


def _schedule_polytope(net, p_s, beta, mode, silenced, rtol=1e-9):
    """Linear constraints of the schedule subproblem.

    Returns ``(free, cons)`` where ``free`` indexes the schedule variables
    not pinned at zero and ``cons`` acts on those only.
    """
    A, P, H = net.awpd, net.pwpd, net.hwpd
    a, p, h = net.counts
    n = p + a + 2 * h
    it0, im0 = p + a, p + a + h
    pinned = np.zeros(n, dtype=bool)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    rows, rhs = [], []

    def row(entries, bound):
        r = np.zeros(n)
        for i, c in entries:
            r[i] += c
        rows.append(r)
        rhs.append(bound)

    snr_ok_p = P.kappa * p_s >= P.snr_min * (1 - rtol)
    snr_ok_h = H.kappa * p_s >= H.snr_min * (1 - rtol)
    pinned[:p] = ~(snr_ok_p & mode.backscatter) if p else pinned[:p]
    pinned[it0:im0] = ~(snr_ok_h & mode.backscatter) if h else pinned[it0:im0]

    e_a = A.phi * A.g_bd * beta * p_s
    for j in range(a):
        i = p + j
        if not mode.active or j in silenced[0] or e_a[j] <= 0:
            pinned[i] = True
            continue
        lb[i] = e_a[j] / A.p_max[j]
        if A.p_min[j] > 0:
            ub[i] = e_a[j] / A.p_min[j]
    for j in range(h):
        it, im = it0 + j, im0 + j
        k = H.phi[j] * H.g_bd[j] * p_s  # E_h = k (beta - tau_h)
        if k > 0:
            row([(it, -k)], H.e_max[j] - k * beta)
            row([(it, k)], k * beta - H.e_min[j])
        elif H.e_min[j] > 0:
            raise InfeasibleError("hybrid device cannot reach its energy floor")
        if not mode.active or j in silenced[1] or k <= 0:
            pinned[im] = True
            continue
        row([(im, H.p_min[j]), (it, k)], k * beta)
        row([(im, -H.p_max[j]), (it, -k)], -k * beta)
    row([(i, 1.0) for i in list(range(p)) + list(range(it0, im0))], beta)
    row([(i, 1.0) for i in list(range(p, p + a)) + list(range(im0, n))], 1.0 - beta)

    free = np.flatnonzero(~pinned)
    G = np.array(rows).reshape(-1, n)
    hvec = np.array(rhs)
    # rows touching only pinned variables must already hold at zero
    Gf = G[:, free]
    const_rows = ~np.any(Gf != 0, axis=1)
    if np.any(hvec[const_rows] < -1e-12 * np.maximum(1.0, np.abs(hvec[const_rows]))):
        raise InfeasibleError("schedule constraints violated by fixed blocks")
    if len(free) == 0:
        return free, None
    cons = LinearConstraintSet(Gf[~const_rows], hvec[~const_rows], lb[free], ub[free])
    return free, cons


def solve_schedule_step(p_l, beta, net: Network, cost: CostModel, mode: Mode = FULL,
                        p_s: Optional[float] = None, constant: Optional[float] = None,
                        start: Optional[Schedule] = None) -> Schedule:
    """Optimal time allocation at fixed price (or beacon power) and beta.

    By default the beacon power is the follower's response to ``p_l`` and the
    objective is the leader's utility. If the polytope is empty because too
    many devices must be active, the weakest HTT devices are silenced one at
    a time until it is not.
    """
    if p_s is None:
        p_s = follower_best_response(p_l, cost)
    if constant is None:
        constant = -p_l * beta * p_s
    coeffs = ScheduleCoefficients.build(net, cost, p_s, beta, constant)
    n = net.n_schedule
    a, p, h = net.counts
    order = sorted([(net.awpd.delta[j], 0, j) for j in range(a)]
                   + [(net.hwpd.delta[j], 1, j) for j in range(h)])
    silenced = (set(), set())
    while True:
        try:
            free, cons = _schedule_polytope(net, p_s, beta, mode, silenced)
            if len(free) == 0:
                return Schedule.zeros(net)

            def lift(z, free=free):
                v = np.zeros(n)
                v[free] = z
                return v

            x0 = start.to_vector()[free] if start is not None else None
            res = concave_max_linear(
                lambda z: coeffs.objective(lift(z)),
                lambda z: coeffs.gradient(lift(z))[free],
                lambda z: coeffs.hessian(lift(z))[np.ix_(free, free)],
                cons, start=x0)
            return Schedule.from_vector(net, np.maximum(lift(res.x), 0.0))
        except InfeasibleError:
            remaining = [o for o in order if o[2] not in silenced[o[1]]]
            if not remaining or not mode.active:
                raise
            _, kind, j = remaining[0]
            silenced[kind].add(j)


# ----------------------------------------------------------------------------
# PA scheme


def solve_price_step(state: LeaderStrategy, net: Network, cost: CostModel) -> float:
    coeffs = PriceCoefficients.build(net, cost, state.beta, state.schedule)
    lo, hi = price_interval(net, cost, state.schedule, state.beta)
    p_l, _ = maximize_on_interval(coeffs.objective, lo, hi, incumbent=state.price)
    return p_l


def solve_beta_step(state: LeaderStrategy, net: Network, cost: CostModel) -> float:
    coeffs = BetaCoefficients.build(net, cost, state.price, state.schedule)
    p_s = follower_best_response(state.price, cost)
    lo, hi = beta_interval(net, cost, state.schedule, p_s)
    beta, _ = maximize_on_interval(coeffs.objective, lo, hi, incumbent=state.beta)
    return beta


def rescale_schedule(sched: Schedule, beta_old: float, beta_new: float) -> Schedule:
    """Stretch the emitting-period slots by ``beta_new / beta_old`` and the
    sleeping-period slots by ``(1 - beta_new) / (1 - beta_old)``."""
    up = beta_new / beta_old if beta_old > 0 else 0.0
    down = (1.0 - beta_new) / (1.0 - beta_old) if beta_old < 1 else 0.0
    return Schedule(sched.theta * up, sched.nu * down, sched.tau * up, sched.mu * down)


def rescale_interval(net: Network, cost: CostModel, sched: Schedule, beta: float,
                     p_s: float):
    """Emitting times reachable by :func:`rescale_schedule` without breaking
    the power or energy windows. The SNR floors do not depend on beta."""
    A, H = net.awpd, net.hwpd
    nu_s = sched.nu / (1.0 - beta) if beta < 1 else np.zeros_like(sched.nu)
    mu_s = sched.mu / (1.0 - beta) if beta < 1 else np.zeros_like(sched.mu)
    tau_s = sched.tau / beta if beta > 0 else np.zeros_like(sched.tau)
    ranges = [(0.0, 1.0)]

    def ratio_window(coef, lo, hi):
        # lo <= coef * b / (1 - b) <= hi, monotone in b
        r_lo, r_hi = _window(coef, lo, hi)
        if r_lo > r_hi:
            return r_lo, r_hi
        r_lo = max(r_lo, 0.0)
        return r_lo / (1.0 + r_lo), 1.0 if math.isinf(r_hi) else r_hi / (1.0 + r_hi)

    k_a = A.phi * A.g_bd * p_s
    on = nu_s > 0
    if np.any(on):
        ranges.append(ratio_window(k_a[on] / nu_s[on], A.p_min[on], A.p_max[on]))
    if len(A):
        ranges.append(_window(k_a, A.e_min, A.e_max))
    k_h = H.phi * H.g_bd * p_s * (1.0 - tau_s)
    on = mu_s > 0
    if np.any(on):
        ranges.append(ratio_window(k_h[on] / mu_s[on], H.p_min[on], H.p_max[on]))
    if len(H):
        ranges.append(_window(k_h, H.e_min, H.e_max))
    return _intersect(*ranges)


def solve_rescale_step(state: LeaderStrategy, net: Network, cost: CostModel,
                       p_s: Optional[float] = None, utility=None) -> LeaderStrategy:
    """Exact line search over beta at fixed price with every slot kept at a
    fixed share of its period. Concave in beta (each HTT term is a
    perspective function of ``(beta, 1 - beta)``), so golden section applies."""
    if p_s is None:
        p_s = follower_best_response(state.price, cost)
    if utility is None:
        def utility(st):
            return leader_utility(st, net, cost)
    lo, hi = rescale_interval(net, cost, state.schedule, state.beta, p_s)
    if lo > hi + 1e-12:
        return state

    def f(b):
        return utility(replace(state, beta=b, schedule=rescale_schedule(
            state.schedule, state.beta, b)))

    b, _ = maximize_on_interval(f, lo, hi, incumbent=state.beta)
    if b == state.beta:
        return state
    return replace(state, beta=b, schedule=rescale_schedule(state.schedule, state.beta, b))


@dataclass(frozen=True)
class ShareModel:
    """Leader utility in ``(beta, E)`` with every slot a fixed share of its period.

    ``E = beta * P_S`` is the beacon energy bought per frame. Backscatter
    slots are ``beta`` times their share, HTT slots ``1 - beta`` times
    theirs. Each throughput term is then a perspective function and the
    bill is ``-(b_m E + 2 a_m E**2 / beta) / (2 a_m)`` times ``2 a_m``, so
    the utility is jointly concave and every constraint is linear.
    """

    w: np.ndarray      # term weights (bit value * bandwidth * share)
    c: np.ndarray      # SNR per unit energy, divided by the share
    side: np.ndarray   # +1 term lives in beta, -1 in (1 - beta)
    a_m: float
    b_m: float
    rows: np.ndarray   # G [beta, E] <= h
    rhs: np.ndarray

    @classmethod
    def build(cls, net: Network, cost: CostModel, state: LeaderStrategy):
        A, P, H = net.awpd, net.pwpd, net.hwpd
        beta, sched = state.beta, state.schedule
        pr = cost.bit_value
        ob, od = net.env.bandwidth_backscatter, net.env.bandwidth_active
        th = sched.theta / beta
        ta = sched.tau / beta
        nu = sched.nu / (1.0 - beta)
        mu = sched.mu / (1.0 - beta)
        w = np.concatenate([pr * ob * th, pr * ob * ta, pr * od * nu, pr * od * mu])
        # backscatter: beta*share*log(1 + k E / beta) = share * xlog(beta, k E)
        c = np.concatenate([P.kappa, H.kappa, _ratio(A.delta, nu),
                            _ratio(H.delta * (1.0 - ta), mu)])
        side = np.concatenate([np.ones(len(P) + len(H)), -np.ones(len(A) + len(H))])
        keep = w > 0
        rows, rhs = [[1.0, -0.0], [-1.0, 0.0], [0.0, -1.0], [-cost.p_s_max, 1.0]], \
            [1.0, 0.0, 0.0, 0.0]

        def window(coef_e, lo, hi, coef_b=0.0, const=0.0):
            # lo <= coef_e E + coef_b beta + const <= hi
            if np.isfinite(hi):
                rows.append([coef_b, coef_e])
                rhs.append(hi - const)
            if lo > 0 or (np.isfinite(lo) and (coef_b != 0 or const != 0)):
                rows.append([-coef_b, -coef_e])
                rhs.append(const - lo)

        for j in range(len(A)):
            k = A.phi[j] * A.g_bd[j]
            window(k, A.e_min[j], A.e_max[j])
            if nu[j] > 0:
                # k E / ((1 - beta) nu) within [p_min, p_max]
                window(k, -math.inf, 0.0, coef_b=A.p_max[j] * nu[j], const=-A.p_max[j] * nu[j])
                window(k, 0.0, math.inf, coef_b=A.p_min[j] * nu[j], const=-A.p_min[j] * nu[j])
        for j in range(len(H)):
            k = H.phi[j] * H.g_bd[j] * (1.0 - ta[j])
            window(k, H.e_min[j], H.e_max[j])
            if mu[j] > 0:
                window(k, -math.inf, 0.0, coef_b=H.p_max[j] * mu[j], const=-H.p_max[j] * mu[j])
                window(k, 0.0, math.inf, coef_b=H.p_min[j] * mu[j], const=-H.p_min[j] * mu[j])
            if ta[j] > 0:
                rows.append([H.snr_min[j], -H.kappa[j]])
                rhs.append(0.0)
        for j in range(len(P)):
            if th[j] > 0:
                rows.append([P.snr_min[j], -P.kappa[j]])
                rhs.append(0.0)
        return cls(w[keep], c[keep], side[keep], cost.a_m, cost.b_m,
                   np.array(rows, dtype=float), np.array(rhs, dtype=float))

    def _slots(self, beta):
        return np.where(self.side > 0, beta, 1.0 - beta)

    def value(self, z) -> float:
        beta, e = float(z[0]), float(z[1])
        s = self._slots(beta)
        bill = self.b_m * e + (2.0 * self.a_m * e * e / beta if beta > 0 else (0.0 if e == 0 else math.inf))
        return float(np.sum(self.w * xlog_term(s, self.c * e))) - bill

    def gradient(self, z):
        beta, e = float(z[0]), float(z[1])
        s = self._slots(beta)
        dx, dc = xlog_grad(s, self.c * e)
        g_beta = float(np.sum(self.w * dx * self.side)) + 2.0 * self.a_m * e * e / beta ** 2
        g_e = float(np.sum(self.w * dc * self.c)) - self.b_m - 4.0 * self.a_m * e / beta
        return np.array([g_beta, g_e])

    def hessian(self, z):
        beta, e = float(z[0]), float(z[1])
        s = self._slots(beta)
        dxx, dxc, dcc = xlog_hess(s, self.c * e)
        a = self.a_m
        h_bb = float(np.sum(self.w * dxx)) - 4.0 * a * e * e / beta ** 3
        h_be = float(np.sum(self.w * dxc * self.c * self.side)) + 4.0 * a * e / beta ** 2
        h_ee = float(np.sum(self.w * dcc * self.c ** 2)) - 4.0 * a / beta
        return np.array([[h_bb, h_be], [h_be, h_ee]])

    def constraints(self) -> LinearConstraintSet:
        return LinearConstraintSet(self.rows, self.rhs, [-np.inf, -np.inf], [np.inf, np.inf])


def to_share_point(state: LeaderStrategy, cost: CostModel):
    p_s = follower_best_response(state.price, cost)
    return np.array([state.beta, state.beta * p_s])


def from_share_point(state: LeaderStrategy, z, cost: CostModel) -> LeaderStrategy:
    beta, e = float(z[0]), max(float(z[1]), 0.0)
    p_s = e / beta
    return LeaderStrategy(cost.price_for_power(p_s), beta,
                          rescale_schedule(state.schedule, state.beta, beta))


def solve_share_step(state: LeaderStrategy, net: Network, cost: CostModel) -> LeaderStrategy:
    """Joint maximisation over (beta, energy) with slot shares fixed."""
    if not 0.0 < state.beta < 1.0 or follower_best_response(state.price, cost) <= 0:
        return state
    model = ShareModel.build(net, cost, state)
    z0 = to_share_point(state, cost)
    try:
        res = concave_max_linear(model.value, model.gradient, model.hessian,
                                 model.constraints(), start=z0)
    except (InfeasibleError, SolverError):
        return state
    if not 0.0 < res.x[0] < 1.0:
        return state
    return from_share_point(state, res.x, cost)


def solve_energy_rescale_step(state: LeaderStrategy, net: Network,
                              cost: CostModel) -> LeaderStrategy:
    """Line search over beta at fixed purchased energy ``beta * P_S``, slots
    at fixed shares; the price follows as ``b_m + 2 a_m E / beta``."""
    if not 0.0 < state.beta < 1.0 or follower_best_response(state.price, cost) <= 0:
        return state
    model = ShareModel.build(net, cost, state)
    z = to_share_point(state, cost)
    G, h = model.rows, model.rhs
    rhs = h - G[:, 1] * z[1]
    gb = G[:, 0]
    lo = max([r / g for g, r in zip(gb, rhs) if g < 0], default=0.0)
    hi = min([r / g for g, r in zip(gb, rhs) if g > 0], default=1.0)
    lo, hi = max(lo, 0.0), min(hi, 1.0)
    if lo > hi + 1e-12 or hi <= 0.0:
        return state
    lo = max(lo, 1e-12 * hi)  # beta = 0 with E > 0 is an infinite price

    def f(b):
        return model.value((b, z[1]))

    b, _ = maximize_on_interval(f, lo, min(hi, 1.0 - 1e-12), incumbent=state.beta)
    if b == state.beta:
        return state
    return from_share_point(state, (b, z[1]), cost)


def equal_split_schedule(net: Network, beta: float, backscatter=None, active=None) -> Schedule:
    """Backscatter window split evenly over ``backscatter`` (PWPD then HWPD
    mask), active window evenly over ``active`` (AWPD then HWPD mask)."""
    a, p, h = net.counts
    bs = np.ones(p + h, dtype=bool) if backscatter is None else np.asarray(backscatter, bool)
    ac = np.ones(a + h, dtype=bool) if active is None else np.asarray(active, bool)
    bs_share = beta / bs.sum() if bs.any() else 0.0
    ac_share = (1.0 - beta) / ac.sum() if ac.any() else 0.0
    theta = np.where(bs[:p], bs_share, 0.0)
    tau = np.where(bs[p:], bs_share, 0.0)
    nu = np.where(ac[:a], ac_share, 0.0)
    mu = np.where(ac[a:], ac_share, 0.0)
    return Schedule(theta, nu, tau, mu)


def default_init(net: Network, cost: CostModel, mode: Mode = FULL,
                 beta0: float = BETA0) -> Optional[LeaderStrategy]:
    """Symmetric interior starting point.

    beta = 0.5; the emitting period is shared equally by the backscatter
    devices able to meet their SNR floor at full beacon power, the sleeping
    period equally by the HTT devices; the price is the midpoint of the
    resulting feasible price range. Falls back to a single transmission type
    when the mixed start has no feasible price, then to other emitting
    times nearest first; ``None`` if nothing works.
    """
    a, p, h = net.counts
    reach_p = net.pwpd.kappa * cost.p_s_max >= net.pwpd.snr_min
    reach_h = net.hwpd.kappa * cost.p_s_max >= net.hwpd.snr_min
    bs = np.concatenate([reach_p, reach_h]) & mode.backscatter
    ac = np.ones(a + h, dtype=bool) & mode.active
    # energy floors far from the beacon may need a longer emitting period
    betas = [beta0] + sorted(np.linspace(0.05, 0.95, 19), key=lambda b: (abs(b - beta0), b))
    for beta in betas:
        for bs_mask, ac_mask in ((bs, ac), (np.zeros_like(bs), ac), (bs, np.zeros_like(ac))):
            if not bs_mask.any() and not ac_mask.any():
                continue
            sched = equal_split_schedule(net, beta, bs_mask, ac_mask)
            lo, hi = price_interval(net, cost, sched, beta)
            if lo <= hi:
                return LeaderStrategy(0.5 * (lo + hi), float(beta), sched)
    return None


def _finish(net, cost, strategy, trace, iterations, converged, method,
            step_trace=None, inner=None, residuals=None) -> GameOutcome:
    u_l = leader_utility(strategy, net, cost)
    p_s = follower_best_response(strategy.price, cost)
    if u_l <= 0:
        return no_trade(net, cost, method, iterations, trace, converged,
                        status="no profitable trade")
    u_f = follower_utility(p_s, strategy.price, strategy.beta, cost)
    return GameOutcome(strategy, p_s, u_l, u_f, u_l + u_f, True, iterations,
                       list(trace), converged, method,
                       inner_traces=list(inner or []),
                       inner_residuals=list(residuals or []),
                       step_trace=list(step_trace or []))


def no_trade(net, cost, method, iterations=0, trace=None, converged=True,
             status="no feasible trade") -> GameOutcome:
    st = LeaderStrategy(cost.b_m, 0.0, Schedule.zeros(net))
    return GameOutcome(st, 0.0, 0.0, 0.0, 0.0, False, iterations, list(trace or []),
                       converged, method, status)


def _start(net, cost, init, mode):
    if init is None:
        init = default_init(net, cost, mode)
        if init is None:
            return None
    elif check_feasibility(init, net, cost):
        raise InfeasibleError("initial strategy violates the leader constraints")
    return init


def pa_solve(net: Network, cost: CostModel, init: Optional[LeaderStrategy] = None,
             xi1: float = XI1, max_iter: int = MAX_OUTER_ITER, mode: Mode = FULL) -> GameOutcome:
    """PA scheme: price step, beta step, schedule step until the leader's
    utility changes by less than ``xi1``.

    After the beta step come the guarded rescale, energy-rescale and share
    moves; after the schedule step the guarded release move. ``step_trace``
    records the utility after each block.
    """
    method = "pa" if mode is FULL else f"{mode.name}-pa"
    state = _start(net, cost, init, mode)
    if state is None:
        return no_trade(net, cost, method)
    u = leader_utility(state, net, cost)
    trace, steps = [u], [u]
    for n in range(1, max_iter + 1):
        try:
            s1 = replace(state, price=solve_price_step(state, net, cost))
            steps.append(leader_utility(s1, net, cost))
            s2 = replace(s1, beta=solve_beta_step(s1, net, cost))
            steps.append(leader_utility(s2, net, cost))
            s2 = _guarded(solve_rescale_step(s2, net, cost), s2, net, cost)
            s2 = _guarded(solve_energy_rescale_step(s2, net, cost), s2, net, cost)
            s2 = _guarded(solve_share_step(s2, net, cost), s2, net, cost)
            steps.append(leader_utility(s2, net, cost))
            s3 = _schedule_update(s2, net, cost, mode)
            steps.append(leader_utility(s3, net, cost))
            s3 = _guarded(solve_release_step(s3, net, cost, mode), s3, net, cost)
            steps.append(leader_utility(s3, net, cost))
        except InfeasibleError:
            return no_trade(net, cost, method, n, trace, status="infeasible step")
        state, u_prev, u = s3, u, steps[-1]
        trace.append(u)
        if abs(u - u_prev) < xi1:
            return _finish(net, cost, state, trace, n, True, method, steps)
    return _finish(net, cost, state, trace, max_iter, False, method, steps)


def _guarded(cand, state, net, cost):
    """Accept ``cand`` only if it is feasible and not worse than ``state``."""
    if cand is state:
        return state
    if leader_utility(cand, net, cost) >= leader_utility(state, net, cost) \
            and not check_feasibility(cand, net, cost):
        return cand
    return state


def solve_release_step(state: LeaderStrategy, net: Network, cost: CostModel,
                       mode: Mode = FULL, rtol: float = 1e-6) -> LeaderStrategy:
    """Drop the backscatter slots whose SNR floor holds the beacon power up.

    A binding floor keeps the price step from lowering the power and the
    schedule step from dropping the slots at the current power, so the
    block steps alone can stall there. The candidate zeroes those slots
    and re-optimises price, shares and schedule; callers keep it only if
    it is better.
    """
    p_s = follower_best_response(state.price, cost)
    if p_s <= 0:
        return state
    sched = state.schedule
    P, H = net.pwpd, net.hwpd
    pin_p = (sched.theta > 0) & (P.kappa * p_s <= P.snr_min * (1.0 + rtol))
    pin_h = (sched.tau > 0) & (H.kappa * p_s <= H.snr_min * (1.0 + rtol))
    if not (pin_p.any() or pin_h.any()):
        return state
    cand = replace(state, schedule=Schedule(np.where(pin_p, 0.0, sched.theta), sched.nu,
                                            np.where(pin_h, 0.0, sched.tau), sched.mu))
    try:
        cand = replace(cand, price=solve_price_step(cand, net, cost))
    except InfeasibleError:
        return state
    cand = _guarded(solve_share_step(cand, net, cost), cand, net, cost)
    return _schedule_update(cand, net, cost, mode)


def _schedule_update(state, net, cost, mode):
    """Schedule step with the monotone safeguard."""
    try:
        sched = solve_schedule_step(state.price, state.beta, net, cost, mode,
                                    start=state.schedule)
    except (InfeasibleError, SolverError):
        return state
    return _guarded(replace(state, schedule=sched), state, net, cost)


# ----------------------------------------------------------------------------
# JA scheme


def to_q(p_l: float, beta: float, b_m: float):
    x = p_l - b_m
    return 0.5 * x * (1.0 + beta), 0.5 * x * (1.0 - beta)


def from_q(q1: float, q2: float, b_m: float, beta_if_degenerate: float = 0.0):
    s = q1 + q2
    beta = (q1 - q2) / s if s > 0 else beta_if_degenerate
    return b_m + s, min(max(beta, 0.0), 1.0)


@dataclass(frozen=True)
class JointCoefficients:
    """Coefficients of the joint (price, beta) subproblem at a fixed schedule."""

    e_p1: np.ndarray
    e_p2: np.ndarray
    e_a3: np.ndarray
    e_a4: np.ndarray
    e_h5: np.ndarray
    e_h6: np.ndarray
    e_h7: np.ndarray
    e_h8: np.ndarray
    s_a1: np.ndarray
    s_h2: np.ndarray
    tau: np.ndarray
    t_bs: float
    t_at: float
    a_m: float
    b_m: float

    @classmethod
    def build(cls, net: Network, cost: CostModel, sched: Schedule):
        A, P, H = net.awpd, net.pwpd, net.hwpd
        pr, a = cost.bit_value, cost.a_m
        ob, od = net.env.bandwidth_backscatter, net.env.bandwidth_active
        zeta = net.env.performance_gap
        e_a4 = _ratio(A.delta, 2.0 * a * sched.nu)
        e_h8 = _ratio(H.delta, 2.0 * a * sched.mu)
        return cls(
            e_p1=pr * ob * sched.theta, e_p2=P.kappa / (2.0 * a),
            e_a3=pr * od * sched.nu, e_a4=e_a4,
            e_h5=pr * ob * sched.tau, e_h6=H.kappa / (2.0 * a),
            e_h7=pr * od * sched.mu, e_h8=e_h8,
            s_a1=e_a4 * A.noise / (zeta * A.g_dg),
            s_h2=e_h8 * H.noise / (zeta * H.g_dg),
            tau=sched.tau.copy(),
            t_bs=sched.backscatter_total, t_at=sched.active_total,
            a_m=a, b_m=cost.b_m,
        )

    def q_objective(self, p_l: float, beta: float) -> float:
        """The joint objective in the original (price, beta) variables."""
        x = p_l - self.b_m
        val = (_log_terms(self.e_p1, self.e_p2, x)
               + _log_terms(self.e_a3, self.e_a4, beta * x)
               + _log_terms(self.e_h5, self.e_h6, x))
        on = self.e_h7 != 0
        if np.any(on):
            val += float(np.sum(self.e_h7[on] * np.log1p(
                self.e_h8[on] * np.maximum(beta - self.tau[on], 0.0) * x)) / LN2)
        return val - beta * p_l * x / (2.0 * self.a_m)

    def _terms(self):
        """Concave log terms as (weights, slopes, directions in (q1, q2))."""
        w, e, d = [], [], []
        for wt, sl, dirs in (
            (self.e_p1, self.e_p2, np.tile([1.0, 1.0], (len(self.e_p1), 1))),
            (self.e_a3, self.e_a4, np.tile([1.0, -1.0], (len(self.e_a3), 1))),
            (self.e_h5, self.e_h6, np.tile([1.0, 1.0], (len(self.e_h5), 1))),
            (self.e_h7, self.e_h8, np.column_stack([1.0 - self.tau, -(1.0 + self.tau)])),
        ):
            on = wt != 0
            w.append(wt[on])
            e.append(sl[on])
            d.append(dirs[on].reshape(-1, 2))
        return np.concatenate(w), np.concatenate(e), np.vstack(d)

    def concave_parts(self):
        """(Q_ccav, grad, hess, Q_cvex, grad) as callables on V = (q1, q2)."""
        w, e, d = self._terms()
        a, b = self.a_m, self.b_m

        def lin(v):
            return d @ v

        def ccav(v):
            v = np.asarray(v, dtype=float)
            return float(np.sum(w * np.log1p(e * np.maximum(lin(v), 0.0))) / LN2
                         - (v[0] ** 2 + b * v[0]) / (2.0 * a))

        def ccav_grad(v):
            v = np.asarray(v, dtype=float)
            coef = w * e / ((1.0 + e * np.maximum(lin(v), 0.0)) * LN2)
            g = d.T @ coef
            g[0] -= (2.0 * v[0] + b) / (2.0 * a)
            return g

        def ccav_hess(v):
            v = np.asarray(v, dtype=float)
            coef = -w * e ** 2 / ((1.0 + e * np.maximum(lin(v), 0.0)) ** 2 * LN2)
            Hm = (d.T * coef) @ d
            Hm[0, 0] -= 1.0 / a
            return Hm

        def cvex(v):
            return float((v[1] ** 2 + b * v[1]) / (2.0 * a))

        def cvex_grad(v):
            return np.array([0.0, (2.0 * v[1] + b) / (2.0 * a)])

        return ccav, ccav_grad, ccav_hess, cvex, cvex_grad

    def q_hat(self, q1: float, q2: float) -> float:
        ccav, _, _, cvex, _ = self.concave_parts()
        v = np.array([q1, q2])
        return ccav(v) + cvex(v)


def joint_constraints(coeffs: JointCoefficients, net: Network, cost: CostModel,
                      sched: Schedule) -> LinearConstraintSet:
    """Linear constraints on ``(q1, q2)``; the two ratio constraints are
    multiplied through by ``q1 + q2 >= 0``."""
    A, P, H = net.awpd, net.pwpd, net.hwpd
    a = cost.a_m
    t_bs, t_at = coeffs.t_bs, coeffs.t_at
    if t_bs + t_at > 1.0 + 1e-9:
        raise InfeasibleError("schedule occupies more than the whole frame")
    rows, rhs = [], []

    def between(vec, lo, hi):
        vec = np.asarray(vec, dtype=float)
        if np.isfinite(hi):
            rows.append(vec)
            rhs.append(hi)
        if lo > 0 or np.isfinite(lo) and lo != 0:
            rows.append(-vec)
            rhs.append(-lo)

    rows.append([-1.0, 1.0]); rhs.append(0.0)                       # q2 <= q1
    rows.append([1.0, 1.0]); rhs.append(2.0 * a * cost.p_s_max)     # cap
    rows.append([-(1.0 - t_bs), 1.0 + t_bs]); rhs.append(0.0)       # beta >= T_bs
    rows.append([t_at, -(2.0 - t_at)]); rhs.append(0.0)             # 1 - beta >= T_at
    for j in range(len(A)):
        if sched.nu[j] > 0:
            between(coeffs.s_a1[j] * np.array([1.0, -1.0]), A.p_min[j], A.p_max[j])
        c = A.phi[j] * A.g_bd[j] / (2.0 * a)
        between(c * np.array([1.0, -1.0]), A.e_min[j], A.e_max[j])
    for j in range(len(H)):
        dvec = np.array([1.0 - sched.tau[j], -(1.0 + sched.tau[j])])
        if sched.mu[j] > 0:
            between(coeffs.s_h2[j] * dvec, H.p_min[j], H.p_max[j])
        c = H.phi[j] * H.g_bd[j] / (2.0 * a)
        between(c * dvec, H.e_min[j], H.e_max[j])
        if sched.tau[j] > 0:
            between(coeffs.e_h6[j] * np.array([1.0, 1.0]), H.snr_min[j], math.inf)
    for j in range(len(P)):
        if sched.theta[j] > 0:
            between(coeffs.e_p2[j] * np.array([1.0, 1.0]), P.snr_min[j], math.inf)
    return LinearConstraintSet(np.array(rows), np.array(rhs), [0.0, 0.0], [np.inf, np.inf])


def build_joint_subproblem(state: LeaderStrategy, net: Network, cost: CostModel,
                           xi2: float = XI2):
    coeffs = JointCoefficients.build(net, cost, state.schedule)
    if abs(coeffs.t_bs + coeffs.t_at - 1.0) < FRAME_SNAP:
        # a frame filled up to rounding pins beta; stating that exactly at the
        # incumbent makes the two ratio rows a ray instead of a thin sliver
        coeffs = replace(coeffs, t_bs=state.beta, t_at=1.0 - state.beta)
    cons = joint_constraints(coeffs, net, cost, state.schedule)
    ccav, ccav_g, ccav_h, cvex, cvex_g = coeffs.concave_parts()
    v0 = np.array(to_q(state.price, state.beta, cost.b_m))
    prob = DcProblem(ccav, ccav_g, ccav_h, cvex, cvex_g, cons, v0, tolerance=xi2)
    return prob, coeffs


def solve_joint_step(state: LeaderStrategy, net: Network, cost: CostModel,
                     xi2: float = XI2):
    """CCCP on the joint subproblem. Returns (strategy, cccp result, KKT residual)."""
    prob, _ = build_joint_subproblem(state, net, cost, xi2)
    res = cccp_solve(prob)
    v = res.x
    grad = prob.concave_grad(v) + prob.convex_grad(v)
    resid, _ = stationarity_residual(grad, prob.constraints, v)
    p_l, beta = from_q(v[0], v[1], cost.b_m, state.beta)
    cand = replace(state, price=p_l, beta=beta)
    if leader_utility(cand, net, cost) < leader_utility(state, net, cost) \
            or check_feasibility(cand, net, cost):
        cand = state
    return cand, res, resid


def ja_solve(net: Network, cost: CostModel, init: Optional[LeaderStrategy] = None,
             xi1: float = XI1, xi2: float = XI2, max_iter: int = MAX_OUTER_ITER,
             mode: Mode = FULL) -> GameOutcome:
    """JA scheme: CCCP joint (price, beta) step then schedule step until the
    leader's utility changes by less than ``xi1``.

    The guarded share move follows the joint step and the guarded release
    move follows the schedule step. ``inner_traces`` and
    ``inner_residuals`` hold each CCCP trace and its terminal KKT residual.
    """
    method = "ja" if mode is FULL else f"{mode.name}-ja"
    state = _start(net, cost, init, mode)
    if state is None:
        return no_trade(net, cost, method)
    u = leader_utility(state, net, cost)
    trace, steps, inner, resid = [u], [u], [], []
    for n in range(1, max_iter + 1):
        try:
            s1, res, r = solve_joint_step(state, net, cost, xi2)
        except (InfeasibleError, SolverError):
            return no_trade(net, cost, method, n, trace, status="infeasible step")
        inner.append([float(t) for t in res.trace])
        resid.append(float(r))
        steps.append(leader_utility(s1, net, cost))
        s1 = _guarded(solve_share_step(s1, net, cost), s1, net, cost)
        steps.append(leader_utility(s1, net, cost))
        s2 = _schedule_update(s1, net, cost, mode)
        steps.append(leader_utility(s2, net, cost))
        s2 = _guarded(solve_release_step(s2, net, cost, mode), s2, net, cost)
        steps.append(leader_utility(s2, net, cost))
        state, u_prev, u = s2, u, steps[-1]
        trace.append(u)
        if abs(u - u_prev) < xi1:
            return _finish(net, cost, state, trace, n, True, method, steps, inner, resid)
    return _finish(net, cost, state, trace, max_iter, False, method, steps, inner, resid)
