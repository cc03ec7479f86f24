"""Experiment definitions shared by the CLI, the gallery and the acceptance suite.

Everything here is deterministic: the same inputs give byte-identical
artifacts regardless of the number of worker processes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .engine import Metrics, SimConfig, TrafficSpec, metrics_csv, zero_load_latency
from .engine.runner import run_many
from .routing import RoundRobinState, UnroutableError, hop_bound, new_route
from .topology import Topology
from .verify import build_cdg, describe_cycle, find_cycle, per_chiplet_scenarios, sweep_scenarios
from .vlselect import FAULT_FREE, STRATEGIES, FaultScenario, SelectionTable, build_tables

# Run-length profiles: (warmup, measure, drain cap) in cycles.
PROFILES: Dict[str, Tuple[int, int, int]] = {
    "smoke": (200, 800, 10_000),
    "quick": (500, 2_000, 20_000),
    "desk": (10_000, 50_000, 200_000),
}

TRAFFIC_KINDS = ("uniform", "localized", "hotspot")
FIG4_RATES = (0.0025, 0.005, 0.01, 0.015, 0.02, 0.025)
FIG5_RATE = 0.01
FIG7_RATES = (0.0025, 0.005, 0.0075, 0.01, 0.0125, 0.015, 0.0175, 0.02)
FIG7_STRATEGIES = ("optimal", "distance", "random")

# A run counts as below saturation when it drained and its mean latency stays
# under this multiple of the analytic zero-load latency.
SATURATION_FACTOR = 3.0


class PlanError(ValueError):
    pass


def fig7_scenario(topo: Topology, name: str) -> FaultScenario:
    """Fixed fault patterns for the fault-latency experiment.

    ``fig7a``: chiplet ``c`` loses its VL with local id ``c mod n`` (one fault
    per chiplet, 4 of 16 on the baseline).  ``fig7b``: chiplet ``c`` loses
    local ids ``c`` and ``c + 1`` (mod n), so 8 of 16 on the baseline.
    """
    ids = []
    for c, vls in enumerate(topo.chiplet_vls):
        n = len(vls)
        if name == "fig7a":
            locs = {c % n}
        elif name == "fig7b":
            locs = {c % n, (c + 1) % n}
        else:
            raise PlanError(f"unknown named scenario {name!r}")
        if len(locs) >= n:
            raise PlanError(f"{name} would disconnect chiplet {c}")
        ids += [vls[i].id for i in sorted(locs)]
    return FaultScenario.of(ids)


def parse_scenario(text: str, topo: Topology) -> FaultScenario:
    """``none``, ``<k>faults:fig7a|fig7b`` or ``vls:<id>,<id>,...``."""
    text = text.strip()
    if text in ("", "none", "fault-free"):
        return FAULT_FREE
    if text.startswith("vls:"):
        try:
            ids = [int(x) for x in text[4:].split(",") if x.strip()]
        except ValueError:
            raise PlanError(f"bad VL list in scenario {text!r}") from None
        for i in ids:
            if not 0 <= i < len(topo.vls):
                raise PlanError(f"VL id {i} out of range")
        return FaultScenario.of(ids)
    if "faults:" in text:
        count, _, name = text.partition("faults:")
        sc = fig7_scenario(topo, name)
        try:
            k = int(count)
        except ValueError:
            raise PlanError(f"bad fault count in scenario {text!r}") from None
        if k != len(sc.faulty):
            raise PlanError(f"scenario {name} has {len(sc.faulty)} faults on this topology, not {k}")
        return sc
    raise PlanError(f"unrecognised scenario {text!r}")


def profile_spec(profile: str, **kw) -> TrafficSpec:
    if profile not in PROFILES:
        raise PlanError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
    warmup, measure, cap = PROFILES[profile]
    return TrafficSpec(warmup=warmup, measure=measure, drain_cap=cap, **kw)


def mean_route_hops(topo: Topology, tables: SelectionTable, scenario: FaultScenario) -> float:
    """Average link hops over all ordered endpoint pairs (uniform traffic)."""
    rr = RoundRobinState(topo.num_routers)
    total = n = 0
    for s in topo.endpoints:
        for d in topo.endpoints:
            if s == d:
                continue
            try:
                st = new_route(topo, tables, scenario, s, d, rr)
            except UnroutableError:
                continue
            if topo.layer[d] >= 0 and topo.layer[d] != topo.layer[s]:
                st.second_intermediate = tables.select(topo, d, scenario, "dest")
            total += hop_bound(st, topo)
            n += 1
    return total / n if n else 0.0


def analytic_zero_load(topo: Topology, tables: SelectionTable, scenario: FaultScenario,
                       packet_flits: int = 8) -> float:
    """Zero-load latency averaged over all ordered endpoint pairs."""
    return zero_load_latency(0, packet_flits) + 2 * mean_route_hops(topo, tables, scenario)


def below_saturation(m: Metrics, zero_load: float) -> bool:
    return not m.saturated and m.delivered > 0 and m.avg_latency <= SATURATION_FACTOR * zero_load


# ------------------------------------------------------------------ plans
@dataclass
class ExperimentPlan:
    topo: Topology
    strategies: Sequence[str] = FIG7_STRATEGIES
    traffic: Sequence[str] = TRAFFIC_KINDS
    max_faults: int = 8
    seed: int = 1
    rho: float = 0.01
    profile: str = "quick"
    config: SimConfig = field(default_factory=SimConfig)
    jobs: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.strategies:
            raise PlanError("strategy list is empty")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise PlanError(f"unknown strategy {s!r}")
        if self.profile not in PROFILES:
            raise PlanError(f"unknown profile {self.profile!r}")

    def tables(self, strategy: str) -> SelectionTable:
        return build_tables(self.topo, rho=self.rho, strategy=strategy, seed=self.seed)

    def spec(self, kind: str, rate: float) -> TrafficSpec:
        return profile_spec(self.profile, kind=kind, rate=rate, seed=self.seed)


def _csv(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def verify_report(topo: Topology, tables: SelectionTable, sabotage: str = "none") -> Tuple[str, bool]:
    """Cycle search over every per-chiplet scenario; returns (text, all_acyclic)."""
    lines = [f"# channel dependency verification, sabotage={sabotage}",
             f"# {topo!r}"]
    ok = True
    memo: dict = {}
    for c, sc in per_chiplet_scenarios(topo):
        g = build_cdg(topo, tables, sc, sabotage=sabotage, memo=memo)
        cyc = find_cycle(g)
        status = "ACYCLIC" if cyc is None else "CYCLE"
        ok &= cyc is None
        lines.append(f"chiplet={c} faulty={sc} nodes={len(g.nodes)} edges={g.num_edges()} {status}")
        if cyc is not None:
            lines.append("  witness: " + describe_cycle(topo, cyc))
    lines.append(f"RESULT {'ACYCLIC' if ok else 'CYCLE'}")
    return "\n".join(lines) + "\n", ok


def fig6_csv(topo: Topology, tables: SelectionTable, max_faults: int) -> str:
    rows = sweep_scenarios(topo, tables, max_faults)
    return _csv(("faults", "fault_rate", "masks", "avg_reachability", "worst_reachability"),
                [(r.faults, f"{r.fault_rate:.5f}", r.masks, f"{r.avg:.6f}", f"{r.worst:.6f}") for r in rows])


def fig4_runs(plan: ExperimentPlan, tables: SelectionTable,
              rates: Sequence[float] = FIG4_RATES) -> List[Tuple[Dict[str, str], Metrics]]:
    cells, keys = [], []
    for kind in plan.traffic:
        for r in rates:
            cells.append((plan.topo, tables, FAULT_FREE, plan.spec(kind, r), plan.config))
            keys.append({"traffic": kind})
    return list(zip(keys, run_many(cells, plan.jobs)))


def fig5_runs(plan: ExperimentPlan, tables: SelectionTable,
              rate: float = FIG5_RATE) -> List[Tuple[Dict[str, str], Metrics]]:
    cells = [(plan.topo, tables, FAULT_FREE, plan.spec(k, rate), plan.config) for k in plan.traffic]
    return list(zip([{"traffic": k} for k in plan.traffic], run_many(cells, plan.jobs)))


def fig7_runs(plan: ExperimentPlan, tables: Dict[str, SelectionTable],
              rates: Sequence[float] = FIG7_RATES,
              scenarios: Sequence[str] = ("4faults:fig7a", "8faults:fig7b")) -> List[Tuple[Dict[str, str], Metrics]]:
    cells, keys = [], []
    for name in scenarios:
        sc = parse_scenario(name, plan.topo)
        for strat in plan.strategies:
            for r in rates:
                cells.append((plan.topo, tables[strat], sc, plan.spec("uniform", r), plan.config))
                keys.append({"scenario": name, "strategy": strat})
    return list(zip(keys, run_many(cells, plan.jobs)))


def runs_csv(runs: Sequence[Tuple[Dict[str, str], Metrics]], keys: Sequence[str]) -> str:
    return metrics_csv([m for _, m in runs], [k for k, _ in runs], keys)
