"""Scenario files, experiment sweeps and result emission.

Scenarios are INI files. Key names carry their unit (``d_bd_m``,
``carrier_frequency_ghz``); unknown sections or keys are rejected. Every
default that fills a missing key is recorded so it can be echoed next to
the results.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from wpbc_game.baselines import (
    price_of_anarchy,
    solve_fixed_mode,
    solve_fixed_price,
    solve_social_welfare,
    stackelberg_welfare,
)
from wpbc_game.errors import ConfigurationError, WpbcError
from wpbc_game.game import CostModel, GameOutcome
from wpbc_game.radio import Device, DeviceKind, RadioEnvironment, dbi_to_linear
from wpbc_game.schemes import MAX_OUTER_ITER, XI1, XI2, ja_solve, pa_solve
from wpbc_game.throughput import Network

METHODS = ("pa", "ja", "fixed-price", "welfare", "bbcm", "httcm", "tdma")
SWEEP_VARS = ("none", "d_bd_m", "d_dg_m", "price_per_bit", "a_m", "b_m",
              "awpd_count", "pwpd_count", "hwpd_count", "devices_per_kind")
CSV_HEADER = ("sweep_var", "sweep_value", "method", "u_leader", "u_follower", "u_welfare",
              "poa", "p_s_star", "p_l_star", "beta_star", "negotiated", "iterations", "wall_ms")

# section -> key -> default (None marks an optional key without default)
SCHEMA: Dict[str, Dict[str, Optional[str]]] = {
    "radio": {
        "carrier_frequency_ghz": "2.4",
        "bandwidth_backscatter_khz": "10",
        "bandwidth_active_mhz": "10",
        "performance_gap": "0.5",
        "reflection_gamma0": "1.0",
        "reflection_gamma1": "0.0",
        "gain_pb_dbi": "6",
        "gain_device_dbi": "6",
        "gain_gateway_dbi": "6",
    },
    "devices": {
        "awpd_count": "10",
        "pwpd_count": "10",
        "hwpd_count": "10",
        "d_bd_m": "5",
        "d_dg_m": "5",
        "d_bd_spread_m": "0",
        "noise_power_w": "1e-12",
        "harvest_efficiency": "0.6",
        "backscatter_attenuation": "0.5",
        "p_tx_min_w": "1e-6",
        "p_tx_max_w": "0.1",
        "e_min_j": "0",
        "e_max_j": "1e-3",
        "snr_min_db": "3",
    },
    "market": {
        "a_m": "5",
        "b_m": "1",
        "p_s_max_w": "4",
        "price_per_bit": "1",
        "revenue_unit_bits": "1e6",
        "fixed_price": None,
    },
    "solver": {
        "methods": ",".join(METHODS),
        "xi1": repr(XI1),
        "xi2": repr(XI2),
        "max_iter": str(MAX_OUTER_ITER),
        "seed": "0",
    },
    "sweep": {
        "variable": "none",
        "values": None,
        "start": None,
        "stop": None,
        "steps": None,
    },
    "benchmark": {
        "per_kind": "5, 10, 15",
        "repetitions": "100",
        "methods": "pa, ja",
    },
}
DEVICE_KEYS = {"kind", "d_bd_m", "d_dg_m", "noise_power_w", "harvest_efficiency",
               "backscatter_attenuation", "p_tx_min_w", "p_tx_max_w", "e_min_j",
               "e_max_j", "snr_min_db"}


@dataclass
class Scenario:
    env: RadioEnvironment
    devices: Dict[str, str]              # resolved [devices] section
    explicit: List[Dict[str, str]]       # explicit device sections, if any
    cost: CostModel
    fixed_price: Optional[float]
    methods: Tuple[str, ...]
    xi1: float
    xi2: float
    max_iter: int
    seed: int
    sweep_var: str
    sweep_values: Tuple[float, ...]
    bench_per_kind: Tuple[int, ...]
    bench_repetitions: int
    bench_methods: Tuple[str, ...]
    applied_defaults: List[str] = field(default_factory=list)
    source: str = ""

    def network(self, rng: Optional[np.random.Generator] = None, **overrides) -> Network:
        """Device roster with optional ``[devices]`` overrides (sweep values)."""
        d = dict(self.devices)
        d.update({k: str(v) for k, v in overrides.items()})
        if self.explicit:
            devs = [_device(spec, d, f"device {i}") for i, spec in enumerate(self.explicit)]
            return Network.build(devs, self.env)
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        spread = _num(d, "d_bd_spread_m", "devices")
        devs = []
        for kind in ("awpd", "pwpd", "hwpd"):
            n = _int(d, f"{kind}_count", "devices")
            for _ in range(n):
                spec = {"kind": kind}
                if spread > 0:
                    base = _num(d, "d_bd_m", "devices")
                    spec["d_bd_m"] = repr(float(base + rng.uniform(-spread, spread)))
                devs.append(_device(spec, d, f"devices.{kind}_count"))
        if not devs:
            raise ConfigurationError("devices: the roster is empty")
        return Network.build(devs, self.env)

    def with_value(self, value: float) -> Tuple[Network, CostModel]:
        """Network and cost model at one sweep point."""
        var = self.sweep_var
        cost = self.cost
        if var == "none":
            return self.network(), cost
        if var in ("price_per_bit", "a_m", "b_m"):
            try:
                return self.network(), replace(cost, **{var: float(value)})
            except ConfigurationError as e:
                raise ConfigurationError(f"sweep.values: {e}") from None
        if var == "devices_per_kind":
            n = int(round(value))
            return self.network(awpd_count=n, pwpd_count=n, hwpd_count=n), cost
        if var.endswith("_count"):
            return self.network(**{var: int(round(value))}), cost
        return self.network(**{var: value}), cost


def _num(d, key, section) -> float:
    try:
        v = float(d[key])
    except (KeyError, ValueError):
        raise ConfigurationError(f"{section}.{key}: expected a number, got {d.get(key)!r}") from None
    if not math.isfinite(v):
        raise ConfigurationError(f"{section}.{key}: must be finite")
    return v


def _int(d, key, section) -> int:
    v = _num(d, key, section)
    if v != int(v) or v < 0:
        raise ConfigurationError(f"{section}.{key}: expected a nonnegative integer")
    return int(v)


def _device(spec: Dict[str, str], base: Dict[str, str], where: str) -> Device:
    d = dict(base)
    d.update(spec)
    kind = d.get("kind", "").strip().upper()
    if kind not in DeviceKind.__members__:
        raise ConfigurationError(f"{where}.kind: expected awpd, pwpd or hwpd, got {d.get('kind')!r}")
    kind = DeviceKind[kind]
    for key in ("d_bd_m", "d_dg_m", "noise_power_w"):
        if not _num(d, key, where) > 0:
            raise ConfigurationError(f"{where}.{key}: must be > 0")
    try:
        return Device(
            kind,
            _num(d, "d_bd_m", where),
            _num(d, "d_dg_m", where),
            _num(d, "noise_power_w", where),
            harvest_efficiency=_num(d, "harvest_efficiency", where) if kind.can_harvest else None,
            backscatter_attenuation=(_num(d, "backscatter_attenuation", where)
                                     if kind.can_backscatter else None),
            p_tx_min=_num(d, "p_tx_min_w", where),
            p_tx_max=_num(d, "p_tx_max_w", where),
            e_min=_num(d, "e_min_j", where),
            e_max=_num(d, "e_max_j", where),
            snr_min=10.0 ** (_num(d, "snr_min_db", where) / 10.0),
        )
    except ConfigurationError as e:
        raise ConfigurationError(f"{where}: {e}") from None


def _list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario text. Errors name the offending field."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigurationError(f"{source}: {e}") from None
    applied: List[str] = []
    resolved: Dict[str, Dict[str, str]] = {}
    explicit: List[Dict[str, str]] = []
    for name in cp.sections():
        if name.startswith("device ") or name.startswith("device."):
            spec = dict(cp[name])
            unknown = set(spec) - DEVICE_KEYS
            if unknown:
                raise ConfigurationError(f"{name}: unknown key(s) {sorted(unknown)}")
            explicit.append(spec)
        elif name not in SCHEMA:
            raise ConfigurationError(f"unknown section [{name}]")
    for section, keys in SCHEMA.items():
        given = dict(cp[section]) if cp.has_section(section) else {}
        unknown = set(given) - set(keys)
        if unknown:
            raise ConfigurationError(f"{section}: unknown key(s) {sorted(unknown)}")
        out = {}
        for key, default in keys.items():
            if key in given:
                out[key] = given[key]
            elif default is not None:
                out[key] = default
                applied.append(f"{section}.{key} = {default}")
        resolved[section] = out
    if explicit:
        counted = [k for k in ("awpd_count", "pwpd_count", "hwpd_count")
                   if cp.has_option("devices", k)]
        if counted:
            raise ConfigurationError(f"devices.{counted[0]}: counts and explicit device "
                                     "sections are mutually exclusive")

    r = resolved["radio"]
    try:
        env = RadioEnvironment(
            carrier_frequency=_num(r, "carrier_frequency_ghz", "radio") * 1e9,
            bandwidth_backscatter=_num(r, "bandwidth_backscatter_khz", "radio") * 1e3,
            bandwidth_active=_num(r, "bandwidth_active_mhz", "radio") * 1e6,
            performance_gap=_num(r, "performance_gap", "radio"),
            gamma0=_num(r, "reflection_gamma0", "radio"),
            gamma1=_num(r, "reflection_gamma1", "radio"),
            gain_pb=dbi_to_linear(_num(r, "gain_pb_dbi", "radio")),
            gain_device=dbi_to_linear(_num(r, "gain_device_dbi", "radio")),
            gain_gateway=dbi_to_linear(_num(r, "gain_gateway_dbi", "radio")),
        )
    except ConfigurationError as e:
        raise ConfigurationError(f"radio: {e}") from None
    m = resolved["market"]
    try:
        cost = CostModel(_num(m, "a_m", "market"), _num(m, "b_m", "market"),
                         _num(m, "p_s_max_w", "market"), _num(m, "price_per_bit", "market"),
                         _num(m, "revenue_unit_bits", "market"))
    except ConfigurationError as e:
        raise ConfigurationError(f"market: {e}") from None
    fixed_price = _num(m, "fixed_price", "market") if "fixed_price" in m else None
    if fixed_price is not None and fixed_price < cost.b_m:
        raise ConfigurationError("market.fixed_price: must be >= b_m")

    s = resolved["solver"]
    methods = tuple(_list(s["methods"]))
    bad = [x for x in methods if x not in METHODS]
    if bad or not methods:
        raise ConfigurationError(f"solver.methods: unknown method(s) {bad}; choose from {METHODS}")
    xi1, xi2 = _num(s, "xi1", "solver"), _num(s, "xi2", "solver")
    if not (xi1 > 0 and xi2 > 0):
        raise ConfigurationError("solver.xi1 and solver.xi2 must be > 0")
    max_iter = _int(s, "max_iter", "solver")
    if max_iter < 1:
        raise ConfigurationError("solver.max_iter: must be >= 1")
    seed = _int(s, "seed", "solver")

    w = resolved["sweep"]
    var = w["variable"].strip()
    if var not in SWEEP_VARS:
        raise ConfigurationError(f"sweep.variable: expected one of {SWEEP_VARS}, got {var!r}")
    values = _sweep_values(w, var)

    b = resolved["benchmark"]
    try:
        per_kind = tuple(int(x) for x in _list(b["per_kind"]))
    except ValueError:
        raise ConfigurationError("benchmark.per_kind: expected integers") from None
    if not per_kind or min(per_kind) < 1:
        raise ConfigurationError("benchmark.per_kind: expected positive integers")
    reps = _int(b, "repetitions", "benchmark")
    if reps < 1:
        raise ConfigurationError("benchmark.repetitions: must be >= 1")
    bench_methods = tuple(_list(b["methods"]))
    bad = [x for x in bench_methods if x not in METHODS]
    if bad:
        raise ConfigurationError(f"benchmark.methods: unknown method(s) {bad}")

    sc = Scenario(env, resolved["devices"], explicit, cost, fixed_price, methods, xi1, xi2,
                  max_iter, seed, var, values, per_kind, reps, bench_methods, applied, source)
    # build every sweep point once so that bad values fail before any solve
    for v in values:
        try:
            sc.with_value(v)
        except ConfigurationError as e:
            raise ConfigurationError(f"sweep value {v!r}: {e}") from None
    return sc


def _sweep_values(w, var) -> Tuple[float, ...]:
    if var == "none":
        if any(k in w for k in ("values", "start", "stop", "steps")):
            raise ConfigurationError("sweep: values given but sweep.variable = none")
        return (math.nan,)
    if "values" in w:
        if any(k in w for k in ("start", "stop", "steps")):
            raise ConfigurationError("sweep: give either values or start/stop/steps")
        try:
            vals = tuple(float(x) for x in _list(w["values"]))
        except ValueError:
            raise ConfigurationError("sweep.values: expected numbers") from None
    else:
        missing = [k for k in ("start", "stop", "steps") if k not in w]
        if missing:
            raise ConfigurationError(f"sweep.{missing[0]}: required for a range sweep")
        n = _int(w, "steps", "sweep")
        if n < 1:
            raise ConfigurationError("sweep.steps: must be >= 1")
        vals = tuple(float(x) for x in np.linspace(_num(w, "start", "sweep"),
                                                    _num(w, "stop", "sweep"), n))
    if not vals:
        raise ConfigurationError("sweep.values: empty")
    return vals


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"{path}: {e.strerror}") from None
    return parse_scenario(text, str(path))


def scenario_preamble(sc: Scenario) -> List[str]:
    """Header lines: source file and every default that was applied."""
    lines = [f"scenario: {sc.source}", f"seed: {sc.seed}"]
    lines += [f"default {x}" for x in sc.applied_defaults]
    return lines


# ----------------------------------------------------------------------------
# sweeps


@dataclass
class ResultRow:
    sweep_var: str
    sweep_value: float
    method: str
    u_leader: float
    u_follower: float
    u_welfare: float
    poa: float
    p_s_star: float
    p_l_star: float
    beta_star: float
    negotiated: bool
    iterations: int
    wall_ms: float
    error: str = ""  # not emitted; set when the solve raised
    outcome: Optional[GameOutcome] = None

    def cells(self, wall_time: bool = True) -> List[str]:
        def f(x):
            return repr(float(x))
        return [self.sweep_var, f(self.sweep_value), self.method, f(self.u_leader),
                f(self.u_follower), f(self.u_welfare), f(self.poa), f(self.p_s_star),
                f(self.p_l_star), f(self.beta_star), str(bool(self.negotiated)).lower(),
                str(int(self.iterations)), f(self.wall_ms if wall_time else 0.0)]


def _solver(method: str, sc: Scenario) -> Callable[[Network, CostModel], GameOutcome]:
    kw = dict(xi1=sc.xi1, max_iter=sc.max_iter)
    if method == "pa":
        return lambda net, cost: pa_solve(net, cost, **kw)
    if method == "ja":
        return lambda net, cost: ja_solve(net, cost, xi2=sc.xi2, **kw)
    if method == "fixed-price":
        return lambda net, cost: solve_fixed_price(net, cost, sc.fixed_price, **kw)
    if method in ("bbcm", "httcm"):
        return lambda net, cost: solve_fixed_mode(net, cost, method, "ja", xi2=sc.xi2, **kw)
    if method == "tdma":
        return lambda net, cost: solve_fixed_mode(net, cost, "tdma")
    raise ConfigurationError(f"unknown method {method!r}")


def _failed_row(var, value, method, err, wall_ms) -> ResultRow:
    nan = math.nan
    return ResultRow(var, value, method, nan, nan, nan, nan, nan, nan, nan, False, 0,
                     wall_ms, error=err)


def run_point(sc: Scenario, net: Network, cost: CostModel, value: float,
              methods: Sequence[str]) -> List[ResultRow]:
    """Run ``methods`` at one sweep point. The welfare optimum (needed for
    the PoA column) is seeded with every other method's outcome."""
    outcomes: Dict[str, Tuple[Optional[GameOutcome], float, str]] = {}
    for m in methods:
        if m == "welfare":
            continue
        t0 = time.perf_counter()
        try:
            out, err = _solver(m, sc)(net, cost), ""
        except WpbcError as e:
            out, err = None, f"{type(e).__name__}: {e}"
        outcomes[m] = (out, 1e3 * (time.perf_counter() - t0), err)
    t0 = time.perf_counter()
    try:
        starts = [o for o, _, _ in outcomes.values() if o is not None]
        welfare = solve_social_welfare(net, cost, xi1=sc.xi1, starts=starts,
                                       max_iter=sc.max_iter)
        w_err = ""
    except WpbcError as e:
        welfare, w_err = None, f"{type(e).__name__}: {e}"
    if "welfare" in methods:
        outcomes["welfare"] = (welfare, 1e3 * (time.perf_counter() - t0), w_err)
    rows = []
    for m in methods:
        out, ms, err = outcomes[m]
        if out is None:
            rows.append(_failed_row(sc.sweep_var, value, m, err, ms))
            continue
        if not out.converged:
            err = "iteration cap reached"
        poa = price_of_anarchy(out, welfare, net, cost) if welfare is not None else math.nan
        u_sw = stackelberg_welfare(out, net, cost)
        rows.append(ResultRow(sc.sweep_var, value, m, out.u_leader, out.u_follower, u_sw, poa,
                              out.p_s_star, out.strategy.price, out.strategy.beta,
                              out.negotiated, out.iterations, ms, err, out))
    return rows


def run_sweep(sc: Scenario, methods: Optional[Sequence[str]] = None) -> List[ResultRow]:
    """One row per (sweep value, method), ordered by sweep index then method."""
    methods = tuple(methods or sc.methods)
    rows: List[ResultRow] = []
    for value in sc.sweep_values:
        net, cost = sc.with_value(value)
        rows.extend(run_point(sc, net, cost, value, methods))
    return rows


# ----------------------------------------------------------------------------
# output


def emit_results(rows: Sequence[ResultRow], path, fmt: str = "csv",
                 preamble: Sequence[str] = (), wall_time: bool = True) -> Path:
    """Write rows as CSV (fixed header, shortest round-trip floats) or as
    plot-ready JSON series. ``preamble`` lines go first, prefixed ``# ``."""
    if not rows:
        raise ConfigurationError("no rows to emit")
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                for line in preamble:
                    fh.write(f"# {line}\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_HEADER)
                for r in rows:
                    w.writerow(r.cells(wall_time))
        elif fmt == "plot":
            path.write_text(json.dumps(plot_series(rows, preamble, wall_time), indent=1) + "\n")
        else:
            raise ConfigurationError(f"unknown format {fmt!r}; expected csv or plot")
    except OSError as e:
        raise OSError(e.errno, f"cannot write results: {e.strerror}", str(path)) from None
    return path


def plot_series(rows: Sequence[ResultRow], preamble: Sequence[str] = (),
                wall_time: bool = True) -> dict:
    """``{method: {metric: {"x": [...], "y": [...]}}}`` keyed by sweep value."""
    metrics = CSV_HEADER[3:]
    series: Dict[str, Dict[str, Dict[str, list]]] = {}
    for r in rows:
        cells = dict(zip(CSV_HEADER, r.cells(wall_time)))
        by_metric = series.setdefault(r.method, {k: {"x": [], "y": []} for k in metrics})
        for k in metrics:
            v = cells[k]
            by_metric[k]["x"].append(_json_num(r.sweep_value))
            y = v == "true" if v in ("true", "false") else _json_num(float(v))
            by_metric[k]["y"].append(y)
    return {"sweep_var": rows[0].sweep_var, "notes": list(preamble), "series": series}


def _json_num(x: float):
    return None if math.isnan(x) else x


# ----------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkStat:
    method: str
    per_kind: int
    n_devices: int
    repetitions: int
    mean_s: float
    p95_s: float


def run_benchmark(sc: Scenario, repetitions: Optional[int] = None,
                  per_kind: Optional[Sequence[int]] = None,
                  methods: Optional[Sequence[str]] = None,
                  clock: Callable[[], float] = time.perf_counter) -> List[BenchmarkStat]:
    """Wall time per solve for N devices of each kind at the scenario point.

    With ``d_bd_spread_m > 0`` every repetition draws fresh placements from
    the scenario seed.
    """
    reps = sc.bench_repetitions if repetitions is None else repetitions
    if reps < 1:
        raise ConfigurationError("repetitions must be >= 1")
    rng = np.random.default_rng(sc.seed)
    stats = []
    for n in per_kind or sc.bench_per_kind:
        for m in methods or sc.bench_methods:
            solve = _solver(m, sc)
            samples = []
            for _ in range(reps):
                net = sc.network(rng, awpd_count=n, pwpd_count=n, hwpd_count=n)
                t0 = clock()
                solve(net, sc.cost)
                samples.append(clock() - t0)
            s = np.array(samples)
            stats.append(BenchmarkStat(m, n, len(net.devices), reps, float(s.mean()),
                                       float(np.percentile(s, 95))))
    return stats
