"""Command-line entry point: ``wpbc-game {solve,sweep,benchmark,verify}``.

Exit codes: 0 success, 1 usage error, 2 invalid scenario, 3 solver failure
(or a failed verification).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from typing import List, Optional, Sequence

from wpbc_game.errors import ConfigurationError, WpbcError
from wpbc_game.game import verify_stackelberg
from wpbc_game.oracle import GridSpec, grid_search, local_improvement_check
from wpbc_game.scenario import (
    CSV_HEADER,
    METHODS,
    Scenario,
    emit_results,
    load_scenario,
    plot_series,
    run_benchmark,
    run_point,
    run_sweep,
    scenario_preamble,
)
from wpbc_game.schemes import ja_solve, pa_solve

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_SOLVER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _methods(text: str) -> List[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {','.join(METHODS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wpbc-game", description="Energy trading and scheduling for "
                "wireless-powered backscatter IoT networks.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, out_help="write results here (default: stdout)"):
        sp.add_argument("scenario", help="scenario INI file")
        sp.add_argument("--methods", type=_methods, help="comma list of " + ",".join(METHODS))
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--seed", type=int, help="override solver.seed")
        sp.add_argument("--xi1", type=float, help="outer stopping tolerance")
        sp.add_argument("--xi2", type=float, help="CCCP stopping tolerance")
        sp.add_argument("--max-iter", type=int, help="outer iteration cap")

    sp = sub.add_parser("solve", help="solve the scenario's base point")
    common(sp)
    sp.add_argument("--format", choices=("csv", "plot"), default="csv")
    sp.add_argument("--reproducible", action="store_true", help="write wall_ms as 0")

    sp = sub.add_parser("sweep", help="run the scenario's sweep")
    common(sp)
    sp.add_argument("--format", choices=("csv", "plot"), default="csv")
    sp.add_argument("--reproducible", action="store_true", help="write wall_ms as 0")

    sp = sub.add_parser("benchmark", help="time the solvers")
    common(sp, "write the timing table here (default: stdout)")
    sp.add_argument("--reps", type=int, help="repetitions per configuration")
    sp.add_argument("--per-kind", help="comma list of devices per kind")

    sp = sub.add_parser("verify", help="grid oracle and equilibrium certificate on a "
                        "one-device-per-kind instance")
    common(sp)
    sp.add_argument("--price-steps", type=int, default=GridSpec.price_steps)
    sp.add_argument("--beta-steps", type=int, default=GridSpec.beta_steps)
    sp.add_argument("--schedule-steps", type=int, default=GridSpec.schedule_steps)
    return p


def _apply_overrides(sc: Scenario, args) -> Scenario:
    kw = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigurationError("--seed must be >= 0")
        kw["seed"] = args.seed
    if args.xi1 is not None:
        kw["xi1"] = args.xi1
    if args.xi2 is not None:
        kw["xi2"] = args.xi2
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    if args.methods:
        kw["methods"] = tuple(args.methods)
    for k in ("xi1", "xi2"):
        if k in kw and not kw[k] > 0:
            raise ConfigurationError(f"--{k} must be > 0")
    if "max_iter" in kw and kw["max_iter"] < 1:
        raise ConfigurationError("--max-iter must be >= 1")
    return replace(sc, **kw)


def _write(rows, args, sc) -> None:
    pre = scenario_preamble(sc)
    wall = not getattr(args, "reproducible", False)
    if args.out:
        emit_results(rows, args.out, args.format, pre, wall)
        print(f"wrote {len(rows)} rows to {args.out}", file=sys.stderr)
        return
    if args.format == "plot":
        print(json.dumps(plot_series(rows, pre, wall), indent=1))
        return
    for line in pre:
        print(f"# {line}")
    print(",".join(CSV_HEADER))
    for r in rows:
        print(",".join(r.cells(wall)))


def _failures(rows) -> List[str]:
    return [f"{r.method} at {r.sweep_var}={r.sweep_value!r}: {r.error}" for r in rows if r.error]


def cmd_solve(sc: Scenario, args) -> int:
    net, cost = sc.network(), sc.cost
    rows = run_point(replace(sc, sweep_var="none"), net, cost, math.nan, sc.methods)
    _write(rows, args, sc)
    return _report(rows)


def cmd_sweep(sc: Scenario, args) -> int:
    rows = run_sweep(sc)
    _write(rows, args, sc)
    return _report(rows)


def _report(rows) -> int:
    bad = _failures(rows)
    for line in bad:
        print(f"solver failure: {line}", file=sys.stderr)
    return EXIT_SOLVER if bad else EXIT_OK


def cmd_benchmark(sc: Scenario, args) -> int:
    per_kind = None
    if args.per_kind:
        try:
            per_kind = [int(x) for x in args.per_kind.split(",") if x.strip()]
        except ValueError:
            raise ConfigurationError("--per-kind: expected integers") from None
        if not per_kind or min(per_kind) < 1:
            raise ConfigurationError("--per-kind: expected positive integers")
    if args.reps is not None and args.reps < 1:
        raise ConfigurationError("--reps must be >= 1")
    methods = args.methods or sc.bench_methods
    stats = run_benchmark(sc, args.reps, per_kind, methods)
    lines = ["method,per_kind,n_devices,repetitions,mean_s,p95_s"]
    lines += [f"{s.method},{s.per_kind},{s.n_devices},{s.repetitions},{s.mean_s!r},{s.p95_s!r}"
              for s in stats]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def small_network(sc: Scenario):
    """The scenario's placement and device parameters with one device per kind."""
    if sc.explicit:
        net = sc.network()
        if max(net.counts) > 1:
            raise ConfigurationError("verify needs at most one explicit device per kind")
        return net
    return sc.network(awpd_count=1, pwpd_count=1, hwpd_count=1, d_bd_spread_m=0)


def cmd_verify(sc: Scenario, args) -> int:
    net, cost = small_network(sc), sc.cost
    spec = GridSpec(args.price_steps, args.beta_steps, args.schedule_steps)
    grid = grid_search("leader", net, cost, spec)
    print(f"grid oracle: value {grid.value!r}, slack {grid.slack!r}, "
          f"{grid.evaluated} evaluations")
    ok = True
    for name, solve in (("pa", pa_solve), ("ja", ja_solve)):
        kw = dict(xi1=sc.xi1, max_iter=sc.max_iter)
        if name == "ja":
            kw["xi2"] = sc.xi2
        out = solve(net, cost, **kw)
        good = out.u_leader >= grid.value - grid.slack
        print(f"{'PASS' if good else 'FAIL'} {name}: utility {out.u_leader!r} "
              f">= grid - slack {grid.value - grid.slack!r}")
        ok &= good
        if out.negotiated:
            lic = local_improvement_check(out.strategy, "leader", net, cost)
            good = not lic.improved
            print(f"{'PASS' if good else 'FAIL'} {name}: best probe gain {lic.best_gain:.3e} "
                  f"over {lic.probes} probes")
            ok &= good
            cert = verify_stackelberg(out, net, cost)
            print(f"{'PASS' if cert.passed else 'FAIL'} {name}: equilibrium certificate "
                  f"(follower gap {cert.follower_gap:.3e}, leader gap {cert.leader_gap:.3e})")
            ok &= cert.passed
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "benchmark": cmd_benchmark,
            "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = _apply_overrides(load_scenario(args.scenario), args)
    except ConfigurationError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    try:
        return COMMANDS[args.verb](sc, args)
    except ConfigurationError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except WpbcError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
