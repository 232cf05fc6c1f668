"""Optimisation primitives: golden-section search, a log-barrier interior
point method for concave objectives over polyhedra, and the convex-concave
procedure for DC programs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog, nnls

from wpbc_game.errors import DomainError, InfeasibleError, SolverError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0  # 1/golden ratio

# barrier method constants
BARRIER_T0 = 1.0
BARRIER_MU = 10.0
NEWTON_TOL = 1e-8
GAP_TOL = 1e-9
CCCP_MAX_ITER = 200


@dataclass
class ScalarProblem:
    objective: Callable[[float], float]
    lower: float
    upper: float
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.lower > self.upper:
            raise DomainError(f"empty interval [{self.lower}, {self.upper}]")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be > 0")


def golden_section_max(prob: ScalarProblem):
    """Maximise a unimodal function on ``[lower, upper]``.

    Returns ``(x, f(x))``. After the bracket has shrunk below the tolerance
    the interior estimate is compared against both end points, so boundary
    maxima are returned exactly; exact ties go to the smaller ``x``.
    """
    f = prob.objective
    lo, hi = float(prob.lower), float(prob.upper)
    if hi - lo <= prob.tolerance:
        candidates = [lo, hi] if hi > lo else [lo]
    else:
        c = hi - INV_PHI * (hi - lo)
        d = lo + INV_PHI * (hi - lo)
        fc, fd = f(c), f(d)
        while hi - lo > prob.tolerance:
            if fc >= fd:
                hi, d, fd = d, c, fc
                c = hi - INV_PHI * (hi - lo)
                fc = f(c)
            else:
                lo, c, fc = c, d, fd
                d = lo + INV_PHI * (hi - lo)
                fd = f(d)
        candidates = [float(prob.lower), 0.5 * (lo + hi), float(prob.upper)]
    best_x, best_f = None, -math.inf
    for x in candidates:
        fx = f(x)
        if fx > best_f:
            best_x, best_f = x, fx
    if best_x is None:
        raise SolverError("objective is not finite anywhere on the interval")
    return best_x, best_f


def golden_iteration_bound(lower, upper, tol) -> int:
    if upper - lower <= tol:
        return 0
    return math.ceil(math.log((upper - lower) / tol) / math.log(1.0 / INV_PHI)) + 2


@dataclass
class LinearConstraintSet:
    """Polyhedron ``{x : A x <= b, lb <= x <= ub}``; infinite bounds allowed."""

    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        n = len(self.lb)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if len(self.ub) != n or self.A.shape[0] != len(self.b):
            raise DomainError("inconsistent constraint dimensions")
        if np.any(self.lb > self.ub):
            raise InfeasibleError("a variable has lb > ub")

    @property
    def dim(self) -> int:
        return len(self.lb)

    def as_rows(self):
        """All constraints as ``G x <= h`` including the finite bounds."""
        n = self.dim
        eye = np.eye(n)
        rows, rhs = [self.A], [self.b]
        fin_u = np.isfinite(self.ub)
        fin_l = np.isfinite(self.lb)
        rows.append(eye[fin_u])
        rhs.append(self.ub[fin_u])
        rows.append(-eye[fin_l])
        rhs.append(-self.lb[fin_l])
        return np.vstack(rows), np.concatenate(rhs)

    def violation(self, x) -> float:
        G, h = self.as_rows()
        if len(h) == 0:
            return 0.0
        return float(max(0.0, np.max(G @ np.asarray(x) - h)))

    def contains(self, x, tol=1e-9) -> bool:
        G, h = self.as_rows()
        scale = np.maximum(1.0, np.abs(h))
        return bool(np.all(G @ np.asarray(x) - h <= tol * scale))


@dataclass
class BarrierResult:
    x: np.ndarray
    value: float
    multipliers: np.ndarray  # one per row of cons.as_rows()
    newton_steps: int
    outer_steps: int


# tight LP tolerances so the implicit-equality test below is meaningful
_LP_OPTS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _phase_one(G, h, eps):
    """Relative-interior point of ``G x <= h`` and the implicit-equality mask.

    Rows are normalised so the slack variable is a Euclidean distance; the
    first LP maximises a common margin (Chebyshev centre). When that margin
    is zero some rows can never be slack; they are found with one LP each
    among the rows tight at the first solution.
    """
    m, n = G.shape
    norms = np.linalg.norm(G, axis=1)
    zero_rows = norms < 1e-300
    if np.any(h[zero_rows] < -eps):
        raise InfeasibleError("constant constraint row violated")
    keep = ~zero_rows
    Gk, hk = G[keep] / norms[keep, None], h[keep] / norms[keep]
    mk = len(hk)
    if mk == 0:
        return np.zeros(n), np.zeros(m, dtype=bool)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([Gk, np.ones((mk, 1))])
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=hk, bounds=bounds, method="highs", options=_LP_OPTS)
    if res.status != 0:
        raise InfeasibleError(f"phase-one LP failed: {res.message}")
    x, margin = res.x[:n], res.x[-1]
    if margin < -eps:
        raise InfeasibleError(f"empty polyhedron (margin {margin:.3e})")
    implicit = np.zeros(mk, dtype=bool)
    if margin <= eps:
        slack = hk - Gk @ x
        witnesses = [x]
        for i in np.flatnonzero(slack <= eps):
            # the extra row caps the slack at 1 so the LP stays bounded
            r = linprog(Gk[i], A_ub=np.vstack([Gk, -Gk[i]]),
                        b_ub=np.append(hk, 1.0 - hk[i]), bounds=[(None, None)] * n,
                        method="highs", options=_LP_OPTS)
            if r.status != 0:
                raise InfeasibleError(f"phase-one LP failed: {r.message}")
            if hk[i] - r.fun <= eps:
                implicit[i] = True
            else:
                witnesses.append(r.x)
        x = np.mean(witnesses, axis=0)
    mask = np.zeros(m, dtype=bool)
    mask[np.flatnonzero(keep)[implicit]] = True
    return x, mask


def concave_max_linear(fun, grad, hess, cons: LinearConstraintSet, start=None,
                       tol=GAP_TOL, max_newton=500) -> BarrierResult:
    """Maximise a smooth concave function over a polyhedron (log barrier).

    ``fun``, ``grad`` and ``hess`` act on full-length vectors. ``start`` is
    used when strictly interior, otherwise the phase-one centre is taken.
    Implicit equalities (rows tight everywhere on the feasible set) are
    eliminated with a null-space parametrisation before the barrier runs.
    The barrier schedule is t0 = 1, t <- 10 t, Newton decrement tolerance
    1e-8 and duality-gap stop m/t < ``tol`` on the normalised objective.
    """
    G, h = cons.as_rows()
    n = cons.dim
    m = len(h)
    hscale = np.maximum(1.0, np.abs(h))
    eps = 1e-9  # a few times the LP feasibility tolerance
    x_int, implicit = _phase_one(G, h, eps)
    if start is not None:
        start = np.asarray(start, dtype=float)
        s0 = h - G @ start
        ok = np.all(s0[~implicit] > 1e-9 * hscale[~implicit]) and \
            np.all(np.abs(s0[implicit]) <= 1e-9 * hscale[implicit])
        if ok:
            x_int = start
    if np.any(implicit):
        N = null_space(G[implicit])
    else:
        N = np.eye(n)
    x0 = x_int
    free_rows = ~implicit
    Gz = G[free_rows] @ N
    hz = h[free_rows] - G[free_rows] @ x0
    # rows independent of z are constant; drop them when slack is positive
    live = np.linalg.norm(Gz, axis=1) > 1e-14 * np.maximum(1.0, np.linalg.norm(G[free_rows], axis=1))
    Gz, hz = Gz[live], hz[live]
    k = N.shape[1]
    mult = np.zeros(m)
    if not np.all(hz > 0):
        raise SolverError("no strictly interior start (polytope too thin)")
    if k == 0:
        val = float(fun(x0))
        return BarrierResult(x0, val, mult, 0, 0)

    f0 = float(fun(x0))
    g0 = np.asarray(grad(x0))
    if not np.isfinite(f0) or not np.all(np.isfinite(N.T @ g0)):
        raise SolverError("objective not finite at the interior start")
    scale = max(1.0, abs(f0))

    def phi(z, t):
        s = hz - Gz @ z
        if (s <= 0).any():
            return math.inf
        fx = fun(x0 + N @ z)
        if not np.isfinite(fx):
            return math.inf
        return -t * fx / scale - np.sum(np.log(s))

    z = np.zeros(k)
    t = BARRIER_T0
    mz = max(len(hz), 1)
    newton_steps = outer = 0
    while True:
        outer += 1
        phi0 = phi(z, t)
        for _ in range(max_newton):
            x = x0 + N @ z
            s = hz - Gz @ z
            gx = np.asarray(grad(x))
            Hx = np.asarray(hess(x))
            inv_s = 1.0 / s
            g = -t * (N.T @ gx) / scale + Gz.T @ inv_s
            H = -t * (N.T @ Hx @ N) / scale + (Gz.T * inv_s ** 2) @ Gz
            try:
                dz = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(H, g, rcond=None)[0]
            lam2 = float(-g @ dz)
            # below this the decrease is lost in the rounding of phi itself
            if lam2 / 2.0 <= max(NEWTON_TOL, 1e-13 * abs(phi0)):
                break
            # largest step keeping strict feasibility
            Gd = Gz @ dz
            pos = Gd > 0
            step = 1.0
            if np.any(pos):
                step = min(1.0, 0.99 * float(np.min(s[pos] / Gd[pos])))
            while step > 1e-12:
                z_new = z + step * dz
                phi_new = phi(z_new, t)
                if phi_new <= phi0 - 0.25 * step * lam2:
                    break
                step *= 0.5
            else:
                break
            if np.array_equal(z_new, z):
                break
            z, phi0 = z_new, phi_new
            newton_steps += 1
        if mz / t < tol:
            break
        t *= BARRIER_MU
        if t > 1e20:
            break
    x = x0 + N @ z
    s = hz - Gz @ z
    y = np.zeros(len(live))
    y[live] = scale / (t * s)  # dual estimates in objective units
    mult[np.flatnonzero(free_rows)] = y
    x, val = _polish(fun, grad, hess, G, h, x)
    return BarrierResult(x, val, mult, newton_steps, outer)


def _polish(fun, grad, hess, G, h, x, active_dist=(1e-7, 1e-4), steps=20):
    """Crossover from the barrier's near-optimal interior point.

    Rows within ``active_dist`` (relative) of ``x`` are taken as active;
    ``x`` is projected onto their intersection and a few Newton steps are
    taken inside it. The result is kept only when it stays feasible and is
    not worse, so optima at vertices and edges are hit exactly instead of
    to barrier accuracy. The wider radius catches degenerate optima (zero
    multipliers), which the barrier only approaches like ``t**-0.5``; it is
    kept only when strictly better.
    """
    f_x = float(fun(x))
    norms = np.linalg.norm(G, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    ref = 1.0 + float(np.max(np.abs(x)))
    tol_feas = 1e-12 * np.maximum(1.0, np.abs(h))

    def feasible(v):
        return bool(np.all(G @ v - h <= tol_feas))

    def value(v):
        # projection may step a hair outside the objective's domain
        try:
            return float(fun(v))
        except ValueError:
            return -math.inf

    def attempt(act):
        Ga, ha = G[act], h[act]
        xp = x + np.linalg.lstsq(Ga, ha - Ga @ x, rcond=None)[0]
        if not feasible(xp):
            return None
        N = null_space(Ga, rcond=1e-10)
        fp = value(xp)
        if not np.isfinite(fp):
            return None
        for _ in range(steps if N.shape[1] else 0):
            g = N.T @ np.asarray(grad(xp))
            Hm = N.T @ np.asarray(hess(xp)) @ N
            try:
                d = -np.linalg.solve(Hm, g)
            except np.linalg.LinAlgError:
                break
            lam2 = float(g @ d)
            if not lam2 > 1e-14 * max(1.0, abs(fp)):
                break
            step = 1.0
            while step > 1e-10:
                cand = xp + step * (N @ d)
                fc = value(cand) if feasible(cand) else -math.inf
                if np.isfinite(fc) and fc >= fp + 0.25 * step * lam2:
                    break
                step *= 0.5
            else:
                break
            xp, fp = cand, fc
        return xp, float(fp)

    dist = (h - G @ x) / norms
    best, tried = (x, f_x), None
    for k, radius in enumerate(active_dist):
        act = dist <= radius * ref
        if not np.any(act) or (tried is not None and np.array_equal(act, tried)):
            continue
        tried = act
        res = attempt(act)
        if res is not None and (res[1] > best[1] or (k == 0 and res[1] >= best[1])):
            best = res
    return best


def stationarity_residual(gradient, cons: LinearConstraintSet, x, active_tol=1e-6):
    """Relative KKT residual of a maximiser of a concave-ish objective.

    Solves ``min ||gradient - G_act^T y||`` over ``y >= 0`` for the rows
    active at ``x`` and returns the residual norm divided by
    ``max(1, ||gradient||)``. Complementary slackness holds by construction
    since only active rows receive multipliers.
    """
    G, h = cons.as_rows()
    x = np.asarray(x, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    slack = h - G @ x
    norms = np.maximum(np.linalg.norm(G, axis=1), 1e-300)
    scale = np.maximum(1.0, np.abs(h)) / norms
    active = slack <= active_tol * scale
    gnorm = max(1.0, float(np.linalg.norm(gradient)))
    if not np.any(active):
        return float(np.linalg.norm(gradient)) / gnorm, np.zeros(0)
    Ga = G[active] / norms[active, None]
    y, res = nnls(Ga.T, gradient)
    return float(res) / gnorm, y


@dataclass
class DcProblem:
    """Maximise ``concave(V) + convex(V)`` over a polyhedron."""

    concave: Callable
    concave_grad: Callable
    concave_hess: Callable
    convex: Callable
    convex_grad: Callable
    constraints: LinearConstraintSet
    start: np.ndarray
    tolerance: float = 1e-8
    max_iter: int = CCCP_MAX_ITER

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        if not self.tolerance > 0:
            raise DomainError("tolerance must be > 0")
        if not self.constraints.contains(self.start, tol=1e-7):
            raise InfeasibleError("CCCP start point is infeasible")

    def value(self, v) -> float:
        return float(self.concave(v) + self.convex(v))


@dataclass
class CccpResult:
    x: np.ndarray
    value: float
    trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    multipliers: Optional[np.ndarray] = None


def cccp_solve(prob: DcProblem) -> CccpResult:
    """Convex-concave procedure.

    Each iteration linearises the convex part at the incumbent and maximises
    the resulting concave surrogate. The surrogate minorises the true
    objective and touches it at the incumbent, so the objective trace is
    nondecreasing; an inner solve that comes back below the incumbent (only
    possible through barrier inexactness) ends the run at the incumbent.
    """
    v = prob.start.copy()
    val = prob.value(v)
    trace = [val]
    mult = None
    for k in range(1, prob.max_iter + 1):
        lin = np.asarray(prob.convex_grad(v), dtype=float)

        def f(x, lin=lin):
            return prob.concave(x) + float(x @ lin)

        def g(x, lin=lin):
            return np.asarray(prob.concave_grad(x)) + lin

        try:
            res = concave_max_linear(f, g, prob.concave_hess, prob.constraints, start=v)
        except (InfeasibleError, SolverError) as exc:
            raise SolverError(f"CCCP inner solve failed: {exc}", iteration=k) from exc
        new_val = prob.value(res.x)
        if new_val < val:
            return CccpResult(v, val, trace, k, True, mult)
        v, mult = res.x, res.multipliers
        prev, val = val, new_val
        trace.append(val)
        if abs(val - prev) < prob.tolerance * max(1.0, abs(val)):
            return CccpResult(v, val, trace, k, True, mult)
        # same linearisation at the new point: the next surrogate is this one
        if np.array_equal(np.asarray(prob.convex_grad(v), dtype=float), lin):
            return CccpResult(v, val, trace, k, True, mult)
    return CccpResult(v, val, trace, prob.max_iter, False, mult)
