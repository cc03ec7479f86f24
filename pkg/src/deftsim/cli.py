"""Command line entry point: ``deftsim {vlopt,verify,sim,sweep}``.

Failures print one machine-readable line on stderr,
``error: {"type": ..., "message": ...}``, and exit with status 2
(status 1 is reserved for a verification that found a dependency cycle).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .engine import SimConfig, TraceFormatError, metrics_csv
from .engine.runner import JOBS_ENV, default_jobs, latency_sweep
from .experiments import (
    FIG4_RATES,
    FIG7_RATES,
    PROFILES,
    ExperimentPlan,
    PlanError,
    fig4_runs,
    fig5_runs,
    fig6_csv,
    fig7_runs,
    parse_scenario,
    profile_spec,
    runs_csv,
    verify_report,
)
from .topology import Topology, TopologyError, preset, read_topology
from .verify import SABOTAGE, build_cdg, describe_cycle, find_cycle
from .vlselect import STRATEGIES, SelectionError, SelectionTable, TrafficProfile, build_tables


class CliError(Exception):
    pass


class CycleFound(Exception):
    pass


def _topology(args) -> Topology:
    if args.topo:
        return read_topology(args.topo)
    return preset(args.preset)


def _tables(args, topo: Topology, strategy: Optional[str] = None) -> SelectionTable:
    if getattr(args, "tables", None):
        path = Path(args.tables)
        if not path.exists():
            raise CliError(f"tables file not found: {path}")
        return SelectionTable.load(path, topo)
    profile = None
    if getattr(args, "profile", None):
        path = Path(args.profile)
        if not path.exists():
            raise CliError(f"traffic profile not found: {path}")
        profile = TrafficProfile.from_json(path.read_text())
    return build_tables(topo, profile, rho=args.rho, strategy=strategy or args.strategy, seed=args.seed)


def _traffic(text: str):
    """(kind, trace path or None) from ``--traffic``."""
    if text.startswith("trace:"):
        return "trace", text[len("trace:"):]
    if text not in ("uniform", "localized", "hotspot"):
        raise CliError(f"unknown traffic {text!r}")
    return text, None


def _rates(text: str) -> List[float]:
    try:
        rates = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad rate list {text!r}") from None
    if not rates:
        raise CliError("empty rate list")
    return rates


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _config(args) -> SimConfig:
    return SimConfig(allow_disconnect=getattr(args, "allow_disconnect", False),
                     check_every=getattr(args, "check_every", 0))


# ------------------------------------------------------------------ commands
def cmd_vlopt(args) -> int:
    topo = _topology(args)
    tables = _tables(args, topo)
    _write(_out_dir(args) / "tables.txt", tables.to_text())
    return 0


def cmd_verify(args) -> int:
    topo = _topology(args)
    tables = _tables(args, topo)
    out = _out_dir(args)
    text, ok = verify_report(topo, tables, args.sabotage)
    _write(out / "verify_report.txt", text)
    if args.max_faults > 0:
        _write(out / "fig6_reachability.csv", fig6_csv(topo, tables, args.max_faults))
    if not ok:
        raise CycleFound("dependency cycle found; see verify_report.txt")
    return 0


def _certify_or_abort(topo: Topology, tables: SelectionTable, scenario) -> None:
    cyc = find_cycle(build_cdg(topo, tables, scenario))
    if cyc is not None:
        raise CycleFound("tables admit a dependency cycle: " + describe_cycle(topo, cyc))


def cmd_sim(args) -> int:
    topo = _topology(args)
    tables = _tables(args, topo)
    scenario = parse_scenario(args.scenario, topo)
    _certify_or_abort(topo, tables, scenario)
    kind, trace = _traffic(args.traffic)
    spec = profile_spec(args.run_profile, kind=kind, seed=args.seed, trace=trace,
                        rate=0.0 if kind == "trace" else _rates(args.rate)[0])
    if args.warmup is not None or args.measure is not None:
        spec.warmup = spec.warmup if args.warmup is None else args.warmup
        spec.measure = spec.measure if args.measure is None else args.measure
    rates = [0.0] if kind == "trace" else _rates(args.rate)
    curve = latency_sweep(topo, tables, scenario, rates, spec, _config(args), jobs=default_jobs())
    text = metrics_csv(curve, [{"traffic": kind, "strategy": args.strategy, "scenario": args.scenario}
                               for _ in curve], ("traffic", "strategy", "scenario"))
    if args.out:
        _write(_out_dir(args) / "sim.csv", text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    topo = _topology(args)
    out = _out_dir(args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    plan = ExperimentPlan(topo, strategies=strategies, max_faults=args.max_faults, seed=args.seed,
                          rho=args.rho, profile=args.run_profile, config=_config(args), jobs=default_jobs())
    tables = {s: (_tables(args, topo, s) if s == "optimal" else plan.tables(s)) for s in strategies}
    main = tables.get("optimal") or tables[strategies[0]]
    _write(out / "tables.txt", main.to_text())
    text, ok = verify_report(topo, main)
    _write(out / "verify_report.txt", text)
    if not ok:
        raise CycleFound("dependency cycle found; see verify_report.txt")
    _write(out / "fig6_reachability.csv", fig6_csv(topo, main, args.max_faults))
    _write(out / "fig4_latency.csv", runs_csv(fig4_runs(plan, main, FIG4_RATES), ("traffic",)))
    _write(out / "fig5_vcutil.csv", runs_csv(fig5_runs(plan, main), ("traffic",)))
    _write(out / "fig7_fault_latency.csv",
           runs_csv(fig7_runs(plan, tables, FIG7_RATES), ("scenario", "strategy")))
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deftsim",
        description="DeFT routing for 2.5D chiplet systems: VL selection, verification, simulation.",
        epilog=f"Set {JOBS_ENV}=N to run independent simulations on N worker processes.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, strategy=True):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--topo", help="topology JSON file")
        g.add_argument("--preset", default="baseline4", help="built-in system (baseline4, six6)")
        sp.add_argument("--rho", type=float, default=0.01, help="distance weight of the VL cost")
        sp.add_argument("--seed", type=int, default=1)
        sp.add_argument("--profile", help="traffic profile JSON for the VL optimizer")
        if strategy:
            sp.add_argument("--strategy", choices=STRATEGIES, default="optimal")
        sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("vlopt", help="build selection tables")
    common(sp)
    sp.set_defaults(func=cmd_vlopt)

    sp = sub.add_parser("verify", help="channel-dependency and reachability checks")
    common(sp)
    sp.add_argument("--tables", help="selection tables file (built when omitted)")
    sp.add_argument("--sabotage", choices=SABOTAGE, default="none")
    sp.add_argument("--max-faults", type=int, default=8)
    sp.set_defaults(func=cmd_verify)

    def simflags(sp):
        sp.add_argument("--run-profile", choices=sorted(PROFILES), default="quick",
                        help="warmup/measure/drain lengths")
        sp.add_argument("--check-every", type=int, default=0,
                        help="run the engine invariant checks every N cycles")
        sp.add_argument("--allow-disconnect", action="store_true")

    sp = sub.add_parser("sim", help="simulate one configuration over a list of rates")
    common(sp)
    sp.add_argument("--tables")
    sp.add_argument("--scenario", default="none", help="none | 4faults:fig7a | 8faults:fig7b | vls:1,5")
    sp.add_argument("--rate", default=",".join(str(r) for r in FIG7_RATES),
                    help="comma-separated injection rates (packets/node/cycle)")
    sp.add_argument("--traffic", default="uniform", help="uniform | localized | hotspot | trace:<path>")
    sp.add_argument("--warmup", type=int)
    sp.add_argument("--measure", type=int)
    simflags(sp)
    sp.set_defaults(func=cmd_sim, out=None)

    sp = sub.add_parser("sweep", help="produce every figure CSV")
    common(sp, strategy=False)
    sp.add_argument("--tables", help="tables used for the optimal strategy")
    sp.add_argument("--strategies", default="optimal,distance,random")
    sp.add_argument("--max-faults", type=int, default=8)
    simflags(sp)
    sp.set_defaults(func=cmd_sweep, strategy="optimal")
    return p


def _error(kind: str, message: str) -> None:
    print("error: " + json.dumps({"type": kind, "message": message}, sort_keys=True), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CycleFound as e:
        _error("CycleFound", str(e))
        return 1
    except FileNotFoundError as e:
        _error("FileNotFound", f"{e.strerror}: {e.filename}")
    except (CliError, PlanError, TopologyError, SelectionError, TraceFormatError, ValueError, OSError) as e:
        _error(type(e).__name__, str(e))
    return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
