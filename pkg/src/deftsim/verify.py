"""
Static checks: channel dependency graphs, cycle search and reachability.

The dependency graph has one node per (channel, VN) pair.  A channel is a
directed link leaving a router through a port, or the injection channel
feeding a router from its network interface.  An edge ``a -> b`` means some
packet admitted by the routing function can hold ``a`` while requesting
``b``.  Intra-layer legs are deterministic XY, so walking every admitted
(source, destination, VL pair, VN trajectory) gives the exact graph.
"""

from __future__ import annotations

import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, NamedTuple, Optional, Set, Tuple

from .routing import (
    ALL_RULES,
    ForcedChoices,
    Hop,
    RoutingError,
    UnroutableError,
    VN,
    walk_route,
)
from .topology import Port, Topology, VerticalLink
from .vlselect import FaultScenario, SelectionTable

logger = logging.getLogger(__name__)

SABOTAGE = ("none", "rule1", "rule2", "rule3", "single_vn")


class ChannelNode(NamedTuple):
    """``(router, port, vn, ingress)``; ingress nodes are injection channels."""

    router: int
    port: Port
    vn: VN
    ingress: bool = False


@dataclass
class DependencyGraph:
    edges: Dict[ChannelNode, Set[ChannelNode]] = field(default_factory=lambda: defaultdict(set))
    nodes: Set[ChannelNode] = field(default_factory=set)

    def add_edge(self, a: ChannelNode, b: ChannelNode) -> None:
        self.nodes.add(a)
        self.nodes.add(b)
        self.edges[a].add(b)

    def num_edges(self) -> int:
        return sum(len(s) for s in self.edges.values())

    def successors(self, n: ChannelNode) -> Set[ChannelNode]:
        return self.edges.get(n, set())


def _rules_for(sabotage: str) -> FrozenSet[int]:
    if sabotage == "none":
        return ALL_RULES
    if sabotage == "single_vn":
        return frozenset()
    if sabotage in ("rule1", "rule2", "rule3"):
        return ALL_RULES - {int(sabotage[-1])}
    raise ValueError(f"unknown sabotage mode {sabotage!r}")


def _hop_channels(topo: Topology, hops: List[Hop], merge_vns: bool) -> List[ChannelNode]:
    def vn(v: VN) -> VN:
        return VN.VN0 if merge_vns else v

    first = hops[0]
    chans = [ChannelNode(first.router, Port.LOCAL, vn(first.vn_in), True)]
    for h in hops:
        chans.append(ChannelNode(h.router, h.out_port, vn(h.vn_out)))
    return chans


def _trajectories(topo: Topology, tables: SelectionTable, scenario: FaultScenario,
                  src: int, dst: int, rules: FrozenSet[int],
                  v1: Optional[VerticalLink], v2: Optional[VerticalLink]) -> Iterator[List[Hop]]:
    """Every VN trajectory of one packet, taking each round-robin draw both ways."""
    # a walk that drew past its prefix is re-walked with the extra draw fixed both ways
    pending = [()]
    while pending:
        prefix = pending.pop()
        rr = ForcedChoices(prefix)
        _, hops = walk_route(topo, tables, scenario, src, dst, rr, rules, v1, v2)
        if rr.overflow:
            pending.append(prefix + (0,))
            pending.append(prefix + (1,))
        else:
            yield hops


def build_cdg(topo: Topology, tables: SelectionTable, scenario: FaultScenario = FaultScenario(),
              sabotage: str = "none", all_vls: bool = False,
              memo: Optional[Dict[tuple, Tuple]] = None) -> DependencyGraph:
    """Dependency graph of every route the tables admit under ``scenario``.

    With ``all_vls`` every fault-free VL pair is walked instead of the table
    choices, covering any table for the scenario.  ``sabotage`` lifts one
    rule (``rule1``/``rule2``/``rule3``) and lets the routing use the freedom,
    or collapses everything into one VN with no rules (``single_vn``).
    Unroutable pairs are skipped.

    A route's dependencies depend only on its endpoints and intermediate VLs,
    so ``memo`` (keyed on those plus the sabotage mode) may be shared across
    scenarios of the same topology.
    """
    rules = _rules_for(sabotage)
    merge = sabotage == "single_vn"
    memo = {} if memo is None else memo
    g = DependencyGraph()
    endpoints = topo.endpoints
    for src in endpoints:
        for dst in endpoints:
            if src == dst:
                continue
            for v1, v2 in _vl_pairs(topo, tables, scenario, src, dst, all_vls):
                key = (src, dst, v1 and v1.id, v2 and v2.id, sabotage)
                edges = memo.get(key)
                if edges is None:
                    found = set()
                    for hops in _trajectories(topo, tables, scenario, src, dst, rules, v1, v2):
                        chans = _hop_channels(topo, hops, merge)
                        found.update(zip(chans, chans[1:]))
                    edges = memo[key] = tuple(sorted(found))
                for a, b in edges:
                    g.add_edge(a, b)
    return g


def _vl_pairs(topo: Topology, tables: SelectionTable, scenario: FaultScenario,
              src: int, dst: int, all_vls: bool) -> Iterable[Tuple[Optional[VerticalLink], Optional[VerticalLink]]]:
    """Intermediate VL pairs to walk; empty when the pair is unroutable."""
    sl, dl = topo.layer[src], topo.layer[dst]
    if sl == dl:
        return [(None, None)]
    if all_vls:
        firsts = list(scenario.available(topo, sl)) if sl >= 0 else [None]
        seconds = list(scenario.available(topo, dl)) if dl >= 0 else [None]
        return itertools.product(firsts, seconds)
    v1 = tables.select(topo, src, scenario, "source") if sl >= 0 else None
    v2 = tables.select(topo, dst, scenario, "dest") if dl >= 0 else None
    if (sl >= 0 and v1 is None) or (dl >= 0 and v2 is None):
        return []
    return [(v1, v2)]


def find_cycle(g: DependencyGraph) -> Optional[List[ChannelNode]]:
    """A witness cycle ``[n0, n1, ..., n0]`` or None if ``g`` is acyclic.

    Iterative three-colour DFS over sorted nodes, so the witness is
    deterministic for a given graph.
    """
    WHITE, GREY, BLACK = 0, 1, 2
    colour: Dict[ChannelNode, int] = {}
    succ = {n: sorted(s) for n, s in g.edges.items()}
    for root in sorted(g.nodes):
        if colour.get(root, WHITE) != WHITE:
            continue
        stack = [(root, iter(succ.get(root, ())))]
        path = [root]
        colour[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[node] = BLACK
                stack.pop()
                path.pop()
                continue
            c = colour.get(nxt, WHITE)
            if c == GREY:
                start = path.index(nxt)
                return path[start:] + [nxt]
            if c == WHITE:
                colour[nxt] = GREY
                path.append(nxt)
                stack.append((nxt, iter(succ.get(nxt, ()))))
    return None


def topological_order(g: DependencyGraph) -> Optional[List[ChannelNode]]:
    """Kahn ordering of ``g``; None when a cycle prevents one."""
    indeg = {n: 0 for n in g.nodes}
    for a, bs in g.edges.items():
        for b in bs:
            indeg[b] += 1
    ready = sorted(n for n, d in indeg.items() if d == 0)
    order = []
    while ready:
        n = ready.pop()
        order.append(n)
        for b in g.successors(n):
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    return order if len(order) == len(g.nodes) else None


def describe_cycle(topo: Topology, cycle: List[ChannelNode]) -> str:
    parts = []
    for n in cycle:
        tag = "inj" if n.ingress else n.port.name
        parts.append(f"{topo.router(n.router)}:{tag}/{n.vn.name}")
    return " -> ".join(parts)


# -- reachability -------------------------------------------------------------


@dataclass(frozen=True)
class ReachabilityReport:
    scenario: FaultScenario
    reachable_pairs: int
    total_pairs: int

    @property
    def ratio(self) -> float:
        return self.reachable_pairs / self.total_pairs if self.total_pairs else 1.0


def _routable(topo: Topology, tables: SelectionTable, scenario: FaultScenario, src: int, dst: int) -> bool:
    try:
        walk_route(topo, tables, scenario, src, dst, ForcedChoices(()))
    except UnroutableError:
        return False
    return True


def reachability(topo: Topology, tables: SelectionTable, scenario: FaultScenario) -> ReachabilityReport:
    """Walk every ordered endpoint pair and count the ones that reach their destination."""
    ends = topo.endpoints
    ok = 0
    for s in ends:
        for d in ends:
            if s != d and _routable(topo, tables, scenario, s, d):
                ok += 1
    n = len(ends)
    return ReachabilityReport(scenario, ok, n * (n - 1))


@dataclass
class SweepRow:
    faults: int
    fault_rate: float
    masks: int
    avg: float
    worst: float


class _LegCache:
    """Routable-leg sets per (chiplet, local scenario).

    An inter-chiplet route splits into a source leg (up to and across the
    first VL), an interposer leg (never faulty) and a destination leg (across
    the second VL and down to the router).  Legs depend only on the local
    scenario of their own chiplet, so whole-system masks can be scored from
    cached per-chiplet leg walks.
    """

    def __init__(self, topo: Topology, tables: SelectionTable):
        self.topo = topo
        self.tables = tables
        self._src: Dict[Tuple[int, Tuple[int, ...]], Set[int]] = {}
        self._dst: Dict[Tuple[int, Tuple[int, ...]], Set[int]] = {}
        # any interposer router works as the far end of a leg
        self._probe = topo.interposer_index(0, 0)

    def _scenario(self, chiplet: int, local: Tuple[int, ...]) -> FaultScenario:
        return FaultScenario.of(self.topo.vl_id(chiplet, i) for i in local)

    def sources(self, chiplet: int, local: Tuple[int, ...]) -> Set[int]:
        key = (chiplet, local)
        if key not in self._src:
            sc = self._scenario(chiplet, local)
            # leg ends on the interposer; probing with a DRAM-style destination walks it alone
            self._src[key] = {r for r in self.topo.chiplet_routers(chiplet)
                              if self._leg_ok(sc, r, self._probe)}
        return self._src[key]

    def dests(self, chiplet: int, local: Tuple[int, ...]) -> Set[int]:
        key = (chiplet, local)
        if key not in self._dst:
            sc = self._scenario(chiplet, local)
            self._dst[key] = {r for r in self.topo.chiplet_routers(chiplet)
                              if self._leg_ok(sc, self._probe, r)}
        return self._dst[key]

    def _leg_ok(self, sc: FaultScenario, src: int, dst: int) -> bool:
        return _routable(self.topo, self.tables, sc, src, dst)


def count_reachable(topo: Topology, tables: SelectionTable, scenario: FaultScenario,
                    cache: Optional[_LegCache] = None) -> ReachabilityReport:
    """Same result as :func:`reachability`, assembled from cached per-chiplet legs."""
    cache = cache or _LegCache(topo, tables)
    n_chip = len(topo.chiplets)
    local = [scenario.local(topo, c) for c in range(n_chip)]
    srcs = [len(cache.sources(c, local[c])) for c in range(n_chip)]
    dsts = [len(cache.dests(c, local[c])) for c in range(n_chip)]
    sizes = [topo.chiplets[c].num_routers for c in range(n_chip)]
    n_ip = len(topo.interposer_sources)
    ok = 0
    for a in range(n_chip):
        ok += sizes[a] * (sizes[a] - 1)
        for b in range(n_chip):
            if a != b:
                ok += srcs[a] * dsts[b]
        ok += srcs[a] * n_ip + n_ip * dsts[a]
    ok += n_ip * (n_ip - 1)
    n = len(topo.endpoints)
    return ReachabilityReport(scenario, ok, n * (n - 1))


def fault_rate(topo: Topology, faults: int) -> float:
    """Faulty fraction of unidirectional vertical channels (two per VL)."""
    return faults / (2 * len(topo.vls))


def iter_masks(topo: Topology, faults: int, connected_only: bool = True) -> Iterator[FaultScenario]:
    for combo in itertools.combinations(range(len(topo.vls)), faults):
        sc = FaultScenario.of(combo)
        if connected_only and not sc.connected(topo):
            continue
        yield sc


def sweep_scenarios(topo: Topology, tables: SelectionTable, max_faults: int,
                    min_faults: int = 1) -> List[SweepRow]:
    """Average and worst reachability per fault count over every connected mask."""
    if max_faults > len(topo.vls):
        raise ValueError(f"max_faults {max_faults} exceeds {len(topo.vls)} VLs")
    cache = _LegCache(topo, tables)
    rows = []
    for k in range(min_faults, max_faults + 1):
        total, worst, count = 0.0, 1.0, 0
        for sc in iter_masks(topo, k):
            r = count_reachable(topo, tables, sc, cache).ratio
            total += r
            worst = min(worst, r)
            count += 1
        rows.append(SweepRow(k, fault_rate(topo, k), count, total / count if count else 1.0, worst))
    return rows


def per_chiplet_scenarios(topo: Topology) -> Iterator[Tuple[int, FaultScenario]]:
    """(chiplet, scenario) for every connected local scenario, others fault-free."""
    from .vlselect import enumerate_scenarios
    for c in range(len(topo.chiplets)):
        for sc in enumerate_scenarios(topo, c):
            yield c, sc


def certify(topo: Topology, tables: SelectionTable) -> List[Tuple[int, FaultScenario, Optional[List[ChannelNode]]]]:
    """Cycle search over every per-chiplet scenario; one result row each."""
    out = []
    memo: Dict[tuple, Tuple] = {}
    for c, sc in per_chiplet_scenarios(topo):
        out.append((c, sc, find_cycle(build_cdg(topo, tables, sc, memo=memo))))
    return out
