"""Comparison scenarios: fixed-price trading, social welfare, price of
anarchy and the fixed transmission modes.

The welfare bill ``beta (a_m P^2 + b_m P)`` equals the leader's bill
``beta P (b_m' + 2 a_m' P)`` under a cost model with ``a_m' = a_m / 2`` and
``b_m' = b_m``, so the welfare problem is solved by the equilibrium schemes
run on that model. Fixed-price trading has a linear bill and gets its own
block-coordinate loop.
"""

from __future__ import annotations

import enum
import math
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from wpbc_game.errors import DomainError, InfeasibleError, SolverError
from wpbc_game.game import (
    CostModel,
    GameOutcome,
    LeaderStrategy,
    check_feasibility,
    fixed_price_utility,
    follower_best_response,
    follower_utility,
    leader_utility,
    social_welfare,
)
from wpbc_game.schemes import (
    BBCM,
    BETA0,
    FULL,
    HTTCM,
    MAX_OUTER_ITER,
    XI1,
    PriceCoefficients,
    ShareModel,
    beta_interval,
    default_init,
    equal_split_schedule,
    ja_solve,
    maximize_on_interval,
    no_trade,
    pa_solve,
    power_interval,
    price_interval,
    rescale_schedule,
    solve_rescale_step,
    solve_schedule_step,
)
from wpbc_game.solvers import concave_max_linear
from wpbc_game.throughput import Network

SCHEMES = {"pa": pa_solve, "ja": ja_solve}


class BaselineKind(str, enum.Enum):
    FIXED_PRICE = "fixed-price"
    SOCIAL_WELFARE = "welfare"
    BBCM = "bbcm"
    HTTCM = "httcm"
    TDMA = "tdma"


def _scheme(name: str):
    try:
        return SCHEMES[name]
    except KeyError:
        raise DomainError(f"unknown scheme {name!r}; expected one of {sorted(SCHEMES)}") from None


# ----------------------------------------------------------------------------
# fixed-price trading


def default_fixed_price(cost: CostModel) -> float:
    """Half of the largest price margin: ``b_m + a_m * p_s_max``."""
    return cost.b_m + cost.a_m * cost.p_s_max


def _fixed_outcome(net, cost, p_l, p_s, st, trace, n, converged) -> GameOutcome:
    u = fixed_price_utility(p_s, st.beta, st.schedule, p_l, net, cost)
    if u <= 0:
        out = no_trade(net, cost, "fixed-price", n, trace, converged, "no profitable trade")
        out.strategy = replace(out.strategy, price=p_l)
        return out
    u_f = follower_utility(p_s, p_l, st.beta, cost)
    return GameOutcome(st, p_s, u, u_f, u + u_f, True, n, list(trace), converged,
                       "fixed-price")


def _share_move(st, p_s, net, cost, p_l):
    """Joint (beta, energy) step with slot shares fixed and a linear bill."""
    if not 0.0 < st.beta < 1.0 or p_s <= 0:
        return st, p_s
    model = replace(ShareModel.build(net, cost, st), a_m=0.0, b_m=p_l)
    try:
        res = concave_max_linear(model.value, model.gradient, model.hessian,
                                 model.constraints(), start=np.array([st.beta, st.beta * p_s]))
    except (InfeasibleError, SolverError):
        return st, p_s
    beta, e = float(res.x[0]), max(float(res.x[1]), 0.0)
    if not 0.0 < beta < 1.0:
        return st, p_s
    return replace(st, beta=beta, schedule=rescale_schedule(st.schedule, st.beta, beta)), e / beta


def solve_fixed_price(net: Network, cost: CostModel, p_l: Optional[float] = None,
                      init: Optional[LeaderStrategy] = None, xi1: float = XI1,
                      max_iter: int = MAX_OUTER_ITER) -> GameOutcome:
    """ISP profit when the ESP posts ``p_l`` and the ISP buys any ``P_S``.

    Block-coordinate ascent over the beacon power, the emitting time (plain
    and with rescaled slots), the joint (emitting time, energy) share step
    and the schedule. ``init`` supplies beta and the schedule; its beacon
    power is the follower response to its price.
    """
    p_l = default_fixed_price(cost) if p_l is None else float(p_l)
    if p_l < cost.b_m:
        raise DomainError("fixed price must be >= b_m")
    if init is None:
        init = default_init(net, cost)
        if init is None:
            out = no_trade(net, cost, "fixed-price")
            out.strategy = replace(out.strategy, price=p_l)
            return out
    p_s = follower_best_response(init.price, cost)
    st = LeaderStrategy(p_l, init.beta, init.schedule)
    if check_feasibility(st, net, cost, p_s=p_s):
        raise InfeasibleError("initial strategy violates the leader constraints")

    def util(s, x):
        return fixed_price_utility(x, s.beta, s.schedule, p_l, net, cost)

    def keep(cand, x, s, x_old):
        if util(cand, x) >= util(s, x_old) and not check_feasibility(cand, net, cost, p_s=x):
            return cand, x
        return s, x_old

    u = util(st, p_s)
    trace = [u]
    for n in range(1, max_iter + 1):
        lo, hi = power_interval(net, cost, st.schedule, st.beta)
        try:
            p_s, _ = maximize_on_interval(lambda x: util(st, x), lo, hi, incumbent=p_s)
            lo, hi = beta_interval(net, cost, st.schedule, p_s)
            b, _ = maximize_on_interval(lambda v: util(replace(st, beta=v), p_s), lo, hi,
                                        incumbent=st.beta)
        except InfeasibleError:
            out = no_trade(net, cost, "fixed-price", n, trace, status="infeasible step")
            out.strategy = replace(out.strategy, price=p_l)
            return out
        st = replace(st, beta=b)
        cand = solve_rescale_step(st, net, cost, p_s=p_s, utility=lambda s: util(s, p_s))
        st, p_s = keep(cand, p_s, st, p_s)
        cand, x = _share_move(st, p_s, net, cost, p_l)
        st, p_s = keep(cand, x, st, p_s)
        try:
            sched = solve_schedule_step(p_l, st.beta, net, cost, FULL, p_s=p_s,
                                        constant=-p_l * st.beta * p_s, start=st.schedule)
            st, p_s = keep(replace(st, schedule=sched), p_s, st, p_s)
        except (InfeasibleError, SolverError):
            pass
        u_prev, u = u, util(st, p_s)
        trace.append(u)
        if abs(u - u_prev) < xi1:
            return _fixed_outcome(net, cost, p_l, p_s, st, trace, n, True)
    return _fixed_outcome(net, cost, p_l, p_s, st, trace, max_iter, False)


# ----------------------------------------------------------------------------
# social welfare


def welfare_cost(cost: CostModel) -> CostModel:
    """Cost model under which the leader's utility is the social welfare."""
    return replace(cost, a_m=cost.a_m / 2.0)


def solve_social_welfare(net: Network, cost: CostModel,
                         init: Optional[LeaderStrategy] = None, xi1: float = XI1,
                         starts: Sequence[GameOutcome] = (), scheme: str = "ja",
                         max_iter: int = MAX_OUTER_ITER) -> GameOutcome:
    """Maximise ``U_SW`` over (beacon power, emitting time, schedule).

    Runs ``scheme`` from the default start, from ``init`` and from every
    negotiated outcome in ``starts`` (typically the Stackelberg point, which
    makes the result dominate it), keeping the best. The returned strategy
    carries the price that makes the follower supply the optimal power, so
    ``u_leader + u_follower == u_social``.
    """
    solve = _scheme(scheme)
    wc = welfare_cost(cost)
    inits = [None]
    if init is not None:
        inits.append(init)
    for o in starts:
        if o.negotiated:
            st = o.strategy
            inits.append(replace(st, price=wc.price_for_power(o.p_s_star)))
    best = None
    for x0 in inits:
        if x0 is not None and check_feasibility(x0, net, wc):
            continue
        out = solve(net, wc, init=x0, xi1=xi1, max_iter=max_iter)
        if best is None or out.u_leader > best.u_leader:
            best = out
    method = f"welfare-{scheme}"
    if best is None or not best.negotiated:
        out = no_trade(net, cost, method, 0 if best is None else best.iterations,
                       [] if best is None else best.trace)
        return out
    p_s = best.p_s_star
    st = replace(best.strategy, price=cost.price_for_power(p_s))
    u_sw = social_welfare(p_s, st.beta, st.schedule, net, cost)
    u_l = leader_utility(st, net, cost, p_s=p_s)
    return GameOutcome(st, p_s, u_l, u_sw - u_l, u_sw, True, best.iterations,
                       list(best.trace), best.converged, method,
                       step_trace=list(best.step_trace))


def stackelberg_welfare(outcome: GameOutcome, net: Network, cost: CostModel) -> float:
    """``U_SW`` at an outcome's point, 0 for no trade."""
    if not outcome.negotiated:
        return 0.0
    st = outcome.strategy
    return social_welfare(outcome.p_s_star, st.beta, st.schedule, net, cost)


def price_of_anarchy(stackelberg: GameOutcome, welfare_opt: GameOutcome,
                     net: Network, cost: CostModel) -> float:
    """Welfare at the equilibrium over the welfare optimum, clamped at 0.

    NaN when the welfare optimum is not positive (no market exists).
    """
    if not welfare_opt.negotiated or welfare_opt.u_social <= 0:
        return math.nan
    return max(stackelberg_welfare(stackelberg, net, cost), 0.0) / welfare_opt.u_social


# ----------------------------------------------------------------------------
# fixed transmission modes


def solve_tdma(net: Network, cost: CostModel, beta: float = BETA0) -> GameOutcome:
    """Identical slots: ``beta = 0.5``, each period split equally over the
    devices that use it, then the price alone by golden section."""
    sched = equal_split_schedule(net, beta)
    u0 = leader_utility(LeaderStrategy(cost.b_m, beta, sched), net, cost)
    lo, hi = price_interval(net, cost, sched, beta)
    if lo > hi:
        return no_trade(net, cost, "tdma", 1, [], status="infeasible step")
    coeffs = PriceCoefficients.build(net, cost, beta, sched)
    p_l, _ = maximize_on_interval(coeffs.objective, lo, hi)
    st = LeaderStrategy(p_l, beta, sched)
    u = leader_utility(st, net, cost)
    if u <= 0:
        return no_trade(net, cost, "tdma", 1, [u0, u], status="no profitable trade")
    p_s = follower_best_response(p_l, cost)
    u_f = follower_utility(p_s, p_l, beta, cost)
    return GameOutcome(st, p_s, u, u_f, u + u_f, True, 1, [u0, u], True, "tdma")


def solve_fixed_mode(net: Network, cost: CostModel, kind, scheme: str = "ja",
                     **kwargs) -> GameOutcome:
    """BBCM (backscatter only), HTTCM (harvest-then-transmit only) or TDMA."""
    kind = BaselineKind(kind)
    if kind is BaselineKind.TDMA:
        return solve_tdma(net, cost)
    if kind is BaselineKind.BBCM:
        return _scheme(scheme)(net, cost, mode=BBCM, **kwargs)
    if kind is BaselineKind.HTTCM:
        return _scheme(scheme)(net, cost, mode=HTTCM, **kwargs)
    raise DomainError(f"{kind.value} is not a fixed transmission mode")
