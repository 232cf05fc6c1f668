"""Player utilities, the follower's closed-form response and the leader's
feasibility check.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from wpbc_game.errors import ConfigurationError
from wpbc_game.throughput import (
    Network,
    Schedule,
    harvested_energies,
    network_throughput,
    transmit_powers,
)


@dataclass(frozen=True)
class CostModel:
    """Beacon operating cost ``a_m x^2 + b_m x`` plus market parameters.

    ``price_per_bit`` is the ISP's benefit per ``revenue_unit_bits``
    delivered bits (1 by default, i.e. literally per bit).
    """

    a_m: float
    b_m: float
    p_s_max: float = 4.0
    price_per_bit: float = 1.0
    revenue_unit_bits: float = 1.0

    def __post_init__(self):
        if not self.a_m > 0:
            raise ConfigurationError("a_m must be > 0")
        if self.b_m < 0:
            raise ConfigurationError("b_m must be >= 0")
        if not self.p_s_max > 0:
            raise ConfigurationError("p_s_max must be > 0")
        if self.price_per_bit < 0:
            raise ConfigurationError("price_per_bit must be >= 0")
        if not self.revenue_unit_bits > 0:
            raise ConfigurationError("revenue_unit_bits must be > 0")

    @property
    def bit_value(self) -> float:
        """Currency earned per single delivered bit."""
        return self.price_per_bit / self.revenue_unit_bits

    @property
    def max_price(self) -> float:
        """Price at which the follower supplies exactly ``p_s_max``."""
        return self.b_m + 2.0 * self.a_m * self.p_s_max

    def price_for_power(self, p_s: float) -> float:
        """Inverse of the follower response."""
        return self.b_m + 2.0 * self.a_m * p_s


@dataclass(frozen=True)
class LeaderStrategy:
    price: float
    beta: float
    schedule: Schedule


@dataclass
class GameOutcome:
    strategy: LeaderStrategy
    p_s_star: float
    u_leader: float
    u_follower: float
    u_social: float
    negotiated: bool
    iterations: int
    trace: List[float] = field(default_factory=list)
    converged: bool = True
    method: str = ""
    status: str = "ok"
    inner_traces: List[List[float]] = field(default_factory=list)
    inner_residuals: List[float] = field(default_factory=list)
    step_trace: List[float] = field(default_factory=list)


def follower_best_response(p_l: float, cost: CostModel) -> float:
    """Beacon power maximising the follower utility: ``(p_l - b_m) / (2 a_m)``.

    Not clamped at ``p_s_max``; the cap is a leader-side constraint. A price
    below ``b_m`` loses money at any positive supply and yields 0 (see
    :func:`below_cost`).
    """
    if p_l < cost.b_m:
        return 0.0
    return (p_l - cost.b_m) / (2.0 * cost.a_m)


def below_cost(p_l: float, cost: CostModel) -> bool:
    return p_l < cost.b_m


def follower_utility(p_s: float, p_l: float, beta: float, cost: CostModel) -> float:
    return beta * (p_l * p_s - cost.a_m * p_s ** 2 - cost.b_m * p_s)


def revenue(net: Network, sched: Schedule, beta: float, p_s: float,
            cost: CostModel) -> float:
    """ISP revenue from delivered data (the service-profit term)."""
    return cost.bit_value * network_throughput(net, sched, beta, p_s)


def leader_utility(strategy: LeaderStrategy, net: Network, cost: CostModel,
                   p_s: Optional[float] = None) -> float:
    """Revenue minus energy bill ``p_l * beta * P_S``.

    ``p_s`` defaults to the follower's best response to ``strategy.price``.
    """
    if p_s is None:
        p_s = follower_best_response(strategy.price, cost)
    return (revenue(net, strategy.schedule, strategy.beta, p_s, cost)
            - strategy.price * strategy.beta * p_s)


def fixed_price_utility(p_s: float, beta: float, sched: Schedule, p_l: float,
                        net: Network, cost: CostModel) -> float:
    """ISP profit when the ESP posts ``p_l`` and the ISP picks ``P_S`` itself."""
    return revenue(net, sched, beta, p_s, cost) - p_l * beta * p_s


def social_welfare(p_s: float, beta: float, sched: Schedule, net: Network,
                   cost: CostModel) -> float:
    return (revenue(net, sched, beta, p_s, cost)
            - beta * (cost.a_m * p_s ** 2 + cost.b_m * p_s))


@dataclass(frozen=True)
class Violation:
    """One violated leader constraint.

    ``constraint`` is one of beacon_power, transmit_power, harvested_energy,
    snr, backscatter_window or active_window.
    """

    constraint: str
    margin: float    # how far past the bound (> 0)
    device: Optional[int] = None
    detail: str = ""


def _over(value, bound, rtol, atol=1e-15):
    """Amount by which ``value`` exceeds ``bound`` beyond tolerance (else 0)."""
    excess = value - bound
    if excess > rtol * max(abs(value), abs(bound)) + atol:
        return excess
    return 0.0


def check_feasibility(strategy: LeaderStrategy, net: Network, cost: CostModel,
                      p_s: Optional[float] = None, rtol: float = 1e-7) -> List[Violation]:
    """All violated leader constraints at ``strategy``.

    ``p_s`` defaults to the follower response to the strategy's price; the
    fixed-price and welfare problems pass their own beacon power. Transmit
    power bounds and SNR floors only bind devices that were given a
    nonzero slot.
    """
    out: List[Violation] = []
    sched = strategy.schedule
    beta = strategy.beta
    if not sched.matches(net):
        raise ConfigurationError("schedule does not match the network")
    if p_s is None:
        if strategy.price < cost.b_m:
            out.append(Violation("beacon_power", cost.b_m - strategy.price,
                                 detail="price below marginal cost"))
        p_s = follower_best_response(strategy.price, cost)
    if p_s < 0:
        out.append(Violation("beacon_power", -p_s, detail="negative beacon power"))
    m = _over(p_s, cost.p_s_max, rtol)
    if m:
        out.append(Violation("beacon_power", m, detail="beacon power above cap"))

    A, P, H = net.awpd, net.pwpd, net.hwpd
    pt_a, pt_h = transmit_powers(net, sched, beta, p_s)
    e_a, e_h = harvested_energies(net, sched, beta, p_s)
    for j in range(len(A)):
        dev = int(A.index[j])
        if sched.nu[j] > 0:
            m = _over(A.p_min[j], pt_a[j], rtol)
            if m:
                out.append(Violation("transmit_power", m, dev, "transmit power below floor"))
            m = _over(pt_a[j], A.p_max[j], rtol)
            if m:
                out.append(Violation("transmit_power", m, dev, "transmit power above cap"))
        m = _over(A.e_min[j], e_a[j], rtol)
        if m:
            out.append(Violation("harvested_energy", m, dev, "harvested energy below floor"))
        m = _over(e_a[j], A.e_max[j], rtol)
        if m:
            out.append(Violation("harvested_energy", m, dev, "harvested energy above capacity"))
    for j in range(len(H)):
        dev = int(H.index[j])
        if sched.mu[j] > 0:
            m = _over(H.p_min[j], pt_h[j], rtol)
            if m:
                out.append(Violation("transmit_power", m, dev, "transmit power below floor"))
            m = _over(pt_h[j], H.p_max[j], rtol)
            if m:
                out.append(Violation("transmit_power", m, dev, "transmit power above cap"))
        m = _over(H.e_min[j], e_h[j], rtol)
        if m:
            out.append(Violation("harvested_energy", m, dev, "harvested energy below floor"))
        m = _over(e_h[j], H.e_max[j], rtol)
        if m:
            out.append(Violation("harvested_energy", m, dev, "harvested energy above capacity"))
        if sched.tau[j] > 0:
            m = _over(H.snr_min[j], H.kappa[j] * p_s, rtol)
            if m:
                out.append(Violation("snr", m, dev, "backscatter SNR below floor"))
    for j in range(len(P)):
        if sched.theta[j] > 0:
            m = _over(P.snr_min[j], P.kappa[j] * p_s, rtol)
            if m:
                out.append(Violation("snr", m, int(P.index[j]),
                                     "backscatter SNR below floor"))

    times = sched.to_vector()
    if np.any(times < 0):
        out.append(Violation("backscatter_window", float(-times.min()), detail="negative time share"))
    if beta < 0 or beta > 1:
        out.append(Violation("backscatter_window", max(-beta, beta - 1.0), detail="beta outside [0, 1]"))
    m = _over(sched.backscatter_total, beta, rtol, 1e-12)
    if m:
        out.append(Violation("backscatter_window", m, detail="backscatter slots exceed emitting period"))
    m = _over(sched.active_total, 1.0 - beta, rtol, 1e-12)
    if m:
        out.append(Violation("active_window", m, detail="active slots exceed sleeping period"))
    return out


def is_feasible(strategy, net, cost, p_s=None, rtol=1e-7) -> bool:
    return not check_feasibility(strategy, net, cost, p_s=p_s, rtol=rtol)


@dataclass
class StackelbergReport:
    follower_ok: bool
    leader_ok: bool
    follower_gap: float
    leader_gap: float
    boundary_skips: int
    probes: int
    improving: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.follower_ok and self.leader_ok


def verify_stackelberg(outcome: GameOutcome, net: Network, cost: CostModel,
                       offsets=None, power_points: int = 2001,
                       tol: float = 1e-6) -> StackelbergReport:
    """Numerical equilibrium certificate.

    (i) the follower's utility at ``P_S*`` is not beaten on a power grid;
    (ii) no single-block perturbation of the leader's price, beta or
    schedule (one coordinate, or a transfer between two slots in the same
    period) that stays feasible improves the leader's utility by more than
    ``tol``. Infeasible probes are counted as boundary skips.
    """
    if offsets is None:
        offsets = (1e-4, 1e-3, 1e-2, 5e-2)
    st = outcome.strategy
    p_star = follower_best_response(st.price, cost)
    grid = np.linspace(0.0, 2.0 * max(cost.p_s_max, p_star), power_points)
    uf_star = follower_utility(p_star, st.price, st.beta, cost)
    uf_grid = st.beta * (st.price * grid - cost.a_m * grid ** 2 - cost.b_m * grid)
    follower_gap = float(max(0.0, uf_grid.max() - uf_star))

    base = leader_utility(st, net, cost)
    probes = skips = 0
    improving = []
    leader_gap = 0.0

    def probe(cand, label):
        nonlocal probes, skips, leader_gap
        if check_feasibility(cand, net, cost):
            skips += 1
            return
        probes += 1
        gain = leader_utility(cand, net, cost) - base
        if gain > leader_gap:
            leader_gap = gain
        if gain > tol:
            improving.append(f"{label}: +{gain:.3e}")

    span = cost.max_price - cost.b_m
    for d in offsets:
        for sgn in (-1.0, 1.0):
            probe(replace(st, price=st.price + sgn * d * span), f"price{sgn * d:+g}")
            probe(replace(st, beta=st.beta + sgn * d), f"beta{sgn * d:+g}")
    vec = st.schedule.to_vector()
    a, p, h = net.counts
    emit_idx = list(range(p)) + list(range(p + a, p + a + h))
    sleep_idx = list(range(p, p + a)) + list(range(p + a + h, p + a + 2 * h))
    for d in offsets:
        for i in range(len(vec)):
            for sgn in (-1.0, 1.0):
                v = vec.copy()
                v[i] += sgn * d
                probe(replace(st, schedule=Schedule.from_vector(net, v)),
                      f"psi[{i}]{sgn * d:+g}")
        for group in (emit_idx, sleep_idx):
            for i, j in itertools.permutations(group, 2):
                v = vec.copy()
                v[i] += d
                v[j] -= d
                probe(replace(st, schedule=Schedule.from_vector(net, v)),
                      f"psi[{j}]->psi[{i}] {d:g}")
    return StackelbergReport(
        follower_ok=follower_gap <= tol,
        leader_ok=not improving,
        follower_gap=follower_gap,
        leader_gap=leader_gap,
        boundary_skips=skips,
        probes=probes,
        improving=improving,
    )
