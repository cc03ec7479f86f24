"""
Design-time vertical-link selection.

For every chiplet and every fault scenario that leaves it connected, pick one
fault-free VL per router so that VL loads stay balanced and routers are not
sent far away.  The cost of a selection ``s`` over the fault-free VLs ``V``::

    l_v   = sum_r T_r * [s(r) == v]
    l_avg = mean_v l_v
    L_v   = |l_v - l_avg| / l_avg          (0 when l_avg == 0)
    D_v   = sum_r dist(r, v) * [s(r) == v]
    C_s   = sum_v rho * D_v + L_v

Two roles are optimized per chiplet: *source* (routers as senders, picking the
VL towards the interposer) and *dest* (routers as receivers, picking the VL
the interposer delivers through).  Results are stored in a
:class:`SelectionTable` consulted by the router at run time.
"""

from __future__ import annotations

import itertools
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .topology import Topology, VerticalLink

logger = logging.getLogger(__name__)

DEFAULT_RHO = 0.01
EXHAUSTIVE_LIMIT = 10 ** 6
ROLES = ("source", "dest")
_TIE_TOL = 1e-9


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class FaultScenario:
    """Set of faulty VLs, by global VL id."""

    faulty: frozenset = frozenset()

    @classmethod
    def of(cls, ids: Iterable[int]) -> "FaultScenario":
        return cls(frozenset(int(i) for i in ids))

    def local(self, topo: Topology, chiplet: int) -> Tuple[int, ...]:
        """Sorted local ids of the faulty VLs of ``chiplet``."""
        return tuple(v.local_id for v in topo.chiplet_vls[chiplet] if v.id in self.faulty)

    def available(self, topo: Topology, chiplet: int) -> Tuple[VerticalLink, ...]:
        return tuple(v for v in topo.chiplet_vls[chiplet] if v.id not in self.faulty)

    def chiplet_connected(self, topo: Topology, chiplet: int) -> bool:
        return any(v.id not in self.faulty for v in topo.chiplet_vls[chiplet])

    def connected(self, topo: Topology) -> bool:
        return all(self.chiplet_connected(topo, c) for c in range(len(topo.chiplets)))

    def __str__(self) -> str:
        return "[" + ",".join(str(i) for i in sorted(self.faulty)) + "]"


FAULT_FREE = FaultScenario()


@dataclass(frozen=True)
class TrafficProfile:
    """Per-router inter-chiplet rates used by the optimizer.

    ``t_inter`` holds send rates (source role); ``r_inter`` receive rates
    (dest role), defaulting to ``t_inter``.  Keys are dense router indices;
    missing routers have rate 0.
    """

    t_inter: Mapping[int, float]
    r_inter: Optional[Mapping[int, float]] = None

    @classmethod
    def uniform(cls, topo: Topology, rate: float = 1.0) -> "TrafficProfile":
        return cls({i: rate for i in range(topo.num_chiplet_routers)})

    def rates(self, topo: Topology, chiplet: int, role: str = "source") -> List[float]:
        table = self.t_inter if role == "source" or self.r_inter is None else self.r_inter
        out = []
        for i in topo.chiplet_routers(chiplet):
            t = float(table.get(i, 0.0))
            if not np.isfinite(t) or t < 0:
                raise SelectionError(f"invalid rate {t} for router {topo.router(i)}")
            out.append(t)
        return out

    @classmethod
    def from_json(cls, text: str) -> "TrafficProfile":
        doc = json.loads(text)
        t = {int(k): float(v) for k, v in doc["t_inter"].items()}
        r = {int(k): float(v) for k, v in doc["r_inter"].items()} if "r_inter" in doc else None
        return cls(t, r)

    def to_json(self) -> str:
        doc = {"t_inter": {str(k): v for k, v in sorted(self.t_inter.items())}}
        if self.r_inter is not None:
            doc["r_inter"] = {str(k): v for k, v in sorted(self.r_inter.items())}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class SelectionSet:
    """One VL choice per router of a chiplet.

    ``choice[k]`` is the local VL id picked by the chiplet's k-th router
    (row-major).  ``available`` lists the fault-free local VL ids the
    selection was made over.  ``None`` marks a router with no usable VL.
    """

    chiplet: int
    available: Tuple[int, ...]
    choice: Tuple[Optional[int], ...]

    def uses(self, router: int, vl: int) -> bool:
        return self.choice[router] == vl

    def counts(self) -> Dict[int, int]:
        return {v: sum(1 for c in self.choice if c == v) for v in self.available}


@dataclass
class CostBreakdown:
    l_v: Dict[int, float]
    l_avg: float
    L_v: Dict[int, float]
    D_v: Dict[int, int]
    C_s: float
    rho: float


# -- cost model -------------------------------------------------------------


def _distance_matrix(topo: Topology, chiplet: int) -> List[List[int]]:
    """dist[k][local_vl] between the chiplet's k-th router and each VL."""
    vls = topo.chiplet_vls[chiplet]
    return [
        [abs(topo.xs[i] - v.chiplet_router.x) + abs(topo.ys[i] - v.chiplet_router.y) for v in vls]
        for i in topo.chiplet_routers(chiplet)
    ]


def vl_load(s: SelectionSet, v: int, rates: Sequence[float]) -> float:
    total = 0.0
    for t, c in zip(rates, s.choice):
        if c == v:
            total += t
    return total


def _average_load(s: SelectionSet, rates: Sequence[float]) -> float:
    return sum(vl_load(s, v, rates) for v in s.available) / len(s.available)


def load_cost(s: SelectionSet, v: int, rates: Sequence[float]) -> float:
    l_avg = _average_load(s, rates)
    if l_avg == 0:
        return 0.0
    return abs(vl_load(s, v, rates) - l_avg) / l_avg


def distance_cost(s: SelectionSet, v: int, topo: Topology) -> int:
    vl = topo.chiplet_vls[s.chiplet][v].chiplet_router
    total = 0
    for k, i in enumerate(topo.chiplet_routers(s.chiplet)):
        if s.choice[k] == v:
            total += abs(topo.xs[i] - vl.x) + abs(topo.ys[i] - vl.y)
    return total


def overall_cost(s: SelectionSet, rates: Sequence[float], topo: Topology,
                 rho: float = DEFAULT_RHO) -> CostBreakdown:
    l_v = {v: vl_load(s, v, rates) for v in s.available}
    l_avg = sum(l_v.values()) / len(s.available)
    if l_avg == 0:
        L_v = {v: 0.0 for v in s.available}
    else:
        L_v = {v: abs(l_v[v] - l_avg) / l_avg for v in s.available}
    D_v = {v: distance_cost(s, v, topo) for v in s.available}
    C_s = sum(rho * D_v[v] + L_v[v] for v in s.available)
    return CostBreakdown(l_v=l_v, l_avg=l_avg, L_v=L_v, D_v=D_v, C_s=C_s, rho=rho)


# -- scenarios --------------------------------------------------------------


def enumerate_scenarios(topo: Topology, chiplet: int) -> List[FaultScenario]:
    """Fault-free plus every scenario with 1..V-1 faulty VLs on ``chiplet``."""
    ids = [v.id for v in topo.chiplet_vls[chiplet]]
    out = [FAULT_FREE]
    for k in range(1, len(ids)):
        out.extend(FaultScenario.of(c) for c in itertools.combinations(ids, k))
    return out


# -- optimizer --------------------------------------------------------------


class _Problem:
    """Flattened optimization instance for one chiplet, scenario and role."""

    def __init__(self, topo: Topology, chiplet: int, scenario: FaultScenario,
                 rates: Sequence[float], rho: float, k_nearest: Optional[int] = None):
        self.chiplet = chiplet
        self.available = tuple(v.local_id for v in scenario.available(topo, chiplet))
        if not self.available:
            raise SelectionError(f"chiplet {chiplet} is disconnected under {scenario}")
        full = _distance_matrix(topo, chiplet)
        self.dist = [[row[v] for v in self.available] for row in full]
        self.rates = list(rates)
        self.rho = rho
        self.n_routers = len(self.rates)
        self.n_vls = len(self.available)
        total = sum(self.rates)
        self.l_avg = total / self.n_vls
        # candidate columns per router, ascending local id (lexicographic DFS order)
        cols = list(range(self.n_vls))
        if k_nearest is not None and k_nearest < self.n_vls:
            self.cands = [sorted(sorted(cols, key=lambda j: (row[j], j))[:k_nearest]) for row in self.dist]
        else:
            self.cands = [cols for _ in self.dist]

    @property
    def space_size(self) -> int:
        size = 1
        for c in self.cands:
            size *= len(c)
        return size

    def selection(self, cols: Sequence[int]) -> SelectionSet:
        return SelectionSet(self.chiplet, self.available, tuple(self.available[j] for j in cols))

    def cost(self, cols: Sequence[int]) -> float:
        loads = [0.0] * self.n_vls
        d = 0
        for k, j in enumerate(cols):
            loads[j] += self.rates[k]
            d += self.dist[k][j]
        if self.l_avg == 0:
            lc = 0.0
        else:
            lc = sum(abs(x - self.l_avg) for x in loads) / self.l_avg
        return self.rho * d * 1.0 + lc


def _exhaustive(p: _Problem) -> List[int]:
    """Vectorized scan of every selection, lexicographic tie-break."""
    n = p.space_size
    if n > EXHAUSTIVE_LIMIT:
        raise SelectionError(f"search space {n} exceeds exhaustive limit {EXHAUSTIVE_LIMIT}")
    idx = np.arange(n, dtype=np.int64)
    loads = np.zeros((n, p.n_vls))
    dist = np.zeros(n)
    digits = np.empty((p.n_routers, n), dtype=np.int64)
    rest = idx
    # router 0 is the most significant digit so index order == lexicographic order
    for k in range(p.n_routers - 1, -1, -1):
        base = len(p.cands[k])
        rest, d = np.divmod(rest, base)
        digits[k] = np.asarray(p.cands[k])[d]
    rows = np.arange(n)
    for k in range(p.n_routers):
        col = digits[k]
        loads[rows, col] += p.rates[k]
        dist += np.asarray(p.dist[k], dtype=float)[col]
    if p.l_avg == 0:
        lc = np.zeros(n)
    else:
        lc = np.abs(loads - p.l_avg).sum(axis=1) / p.l_avg
    cost = p.rho * dist + lc
    best = np.flatnonzero(cost <= cost.min() + _TIE_TOL)[0]
    return [int(c) for c in digits[:, best]]


def _greedy_incumbent(p: _Problem) -> List[int]:
    return [min(p.cands[k], key=lambda j: (p.dist[k][j], j)) for k in range(p.n_routers)]


def _branch_and_bound(p: _Problem) -> List[int]:
    """Exact depth-first search in lexicographic order.

    Lower bound at a partial assignment = rho * (distance so far + nearest
    candidate distance of every unassigned router) + load-cost bound.  The
    load bound is the unavoidable overshoot above ``l_avg`` for general rates,
    and the exact best completion when all rates are equal.
    """
    R, V = p.n_routers, p.n_vls
    rho, avg = p.rho, p.l_avg
    rates, dist, cands = p.rates, p.dist, p.cands
    suffix_min = [0.0] * (R + 1)
    for k in range(R - 1, -1, -1):
        suffix_min[k] = suffix_min[k + 1] + min(dist[k][j] for j in cands[k])
    uniform = len(set(rates)) == 1 and rates[0] > 0
    unit = rates[0] if rates else 0.0

    completion_memo: Dict[Tuple[int, ...], float] = {}

    def uniform_completion(counts: Tuple[int, ...], remaining: int) -> float:
        # best sum |n_v - a| reachable by adding `remaining` units; marginal costs are convex
        key = counts + (remaining,)
        hit = completion_memo.get(key)
        if hit is not None:
            return hit
        a = R / V
        n = list(counts)
        for _ in range(remaining):
            j = min(range(V), key=lambda j: abs(n[j] + 1 - a) - abs(n[j] - a))
            n[j] += 1
        val = sum(abs(x - a) for x in n) / a
        completion_memo[key] = val
        return val

    def load_bound(loads: List[float], counts: List[int], depth: int) -> float:
        if avg == 0:
            return 0.0
        if uniform:
            return uniform_completion(tuple(counts), R - depth)
        over = 0.0
        for x in loads:
            if x > avg:
                over += x - avg
        return 2.0 * over / avg

    incumbent = _greedy_incumbent(p)
    best_cost = p.cost(incumbent)
    best: Optional[List[int]] = None
    loads = [0.0] * V
    counts = [0] * V
    cols = [0] * R
    nodes = 0

    def dfs(depth: int, dsum: int) -> None:
        nonlocal best, best_cost, nodes
        nodes += 1
        if depth == R:
            if avg == 0:
                lc = 0.0
            else:
                lc = sum(abs(x - avg) for x in loads) / avg
            c = rho * dsum + lc
            if (best is None and c <= best_cost + _TIE_TOL) or (best is not None and c < best_cost - _TIE_TOL):
                best, best_cost = list(cols), c
            return
        t = rates[depth]
        row = dist[depth]
        for j in cands[depth]:
            loads[j] += t
            counts[j] += 1
            nd = dsum + row[j]
            lb = rho * (nd + suffix_min[depth + 1]) + load_bound(loads, counts, depth + 1)
            if best is None:
                prune = lb > best_cost + _TIE_TOL
            else:
                prune = lb >= best_cost - _TIE_TOL
            if not prune:
                cols[depth] = j
                dfs(depth + 1, nd)
            loads[j] -= t
            counts[j] -= 1

    dfs(0, 0)
    logger.debug("bnb chiplet=%d V=%d visited %d nodes", p.chiplet, V, nodes)
    assert best is not None
    return best


def optimize_selection(topo: Topology, chiplet: int, scenario: FaultScenario,
                       rates: Sequence[float], rho: float = DEFAULT_RHO,
                       strategy: str = "auto",
                       k_nearest: Optional[int] = None) -> Tuple[SelectionSet, CostBreakdown]:
    """Minimum-cost selection set for one chiplet under ``scenario``.

    ``strategy`` is ``"exhaustive"``, ``"bnb"`` or ``"auto"`` (exhaustive when
    the space has at most ``EXHAUSTIVE_LIMIT`` sets).  Among equal-cost sets
    the lexicographically smallest choice vector wins.  ``k_nearest`` limits
    each router to its k nearest fault-free VLs; this is an approximation and
    is off by default.
    """
    p = _Problem(topo, chiplet, scenario, rates, rho, k_nearest)
    if strategy == "auto":
        strategy = "exhaustive" if p.space_size <= EXHAUSTIVE_LIMIT else "bnb"
    if strategy == "exhaustive":
        cols = _exhaustive(p)
    elif strategy == "bnb":
        cols = _branch_and_bound(p)
    else:
        raise SelectionError(f"unknown search strategy {strategy!r}")
    s = p.selection(cols)
    return s, overall_cost(s, rates, topo, rho)


def baseline_select(kind: str, scenario: FaultScenario, chiplet: int, topo: Topology,
                    seed: int = 0) -> SelectionSet:
    """Reference strategies: ``"distance"`` (nearest fault-free VL, lowest id on
    ties) or ``"random"`` (uniform over fault-free VLs, seeded)."""
    avail = [v.local_id for v in scenario.available(topo, chiplet)]
    if not avail:
        raise SelectionError(f"chiplet {chiplet} is disconnected under {scenario}")
    dist = _distance_matrix(topo, chiplet)
    if kind == "distance":
        choice = tuple(min(avail, key=lambda v: (row[v], v)) for row in dist)
    elif kind == "random":
        # string seeds hash stably across interpreter runs
        rng = random.Random(f"{seed}:{chiplet}:{scenario.local(topo, chiplet)}")
        choice = tuple(rng.choice(avail) for _ in dist)
    else:
        raise SelectionError(f"unknown baseline {kind!r}")
    return SelectionSet(chiplet, tuple(avail), choice)


# -- tables -----------------------------------------------------------------


@dataclass
class SelectionTable:
    """Per chiplet, per local fault scenario, per role: a SelectionSet.

    Keys are ``(chiplet, faulty_local_ids, role)``; ``faulty_local_ids`` is the
    sorted tuple of the chiplet's faulty VL local ids.
    """

    entries: Dict[Tuple[int, Tuple[int, ...], str], SelectionSet] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    def lookup(self, topo: Topology, chiplet: int, scenario: FaultScenario, role: str) -> Optional[SelectionSet]:
        return self.entries.get((chiplet, scenario.local(topo, chiplet), role))

    def select(self, topo: Topology, router: int, scenario: FaultScenario, role: str) -> Optional[VerticalLink]:
        """VL chosen for ``router`` (dense index) in ``role``; None if unroutable."""
        chiplet = topo.layer[router]
        s = self.lookup(topo, chiplet, scenario, role)
        if s is None:
            return None
        local = s.choice[topo.local_index(router)]
        if local is None:
            return None
        vl = topo.chiplet_vls[chiplet][local]
        if vl.id in scenario.faulty:
            return None
        return vl

    def __len__(self) -> int:
        return len(self.entries)

    def to_text(self) -> str:
        rows = [
            {"chiplet": c, "scenario": list(sc), "role": role, "choices": list(s.choice)}
            for (c, sc, role), s in sorted(self.entries.items())
        ]
        # still plain JSON, but one table entry per line
        body = ",\n  ".join(json.dumps(r, sort_keys=True) for r in rows)
        meta = json.dumps(self.meta, sort_keys=True)
        return '{"entries": [\n  ' + body + '\n],\n"meta": ' + meta + "}\n"

    @classmethod
    def from_text(cls, text: str, topo: Topology) -> "SelectionTable":
        doc = json.loads(text)
        tbl = cls(meta=dict(doc.get("meta", {})))
        for row in doc["entries"]:
            c = int(row["chiplet"])
            sc = tuple(sorted(int(x) for x in row["scenario"]))
            avail = tuple(v.local_id for v in topo.chiplet_vls[c] if v.local_id not in sc)
            choice = tuple(None if x is None else int(x) for x in row["choices"])
            if len(choice) != topo.chiplets[c].num_routers:
                raise SelectionError(f"chiplet {c} scenario {list(sc)}: wrong number of choices")
            if any(x is not None and x not in avail for x in choice):
                raise SelectionError(f"chiplet {c} scenario {list(sc)}: choice uses a faulty VL")
            tbl.entries[(c, sc, row["role"])] = SelectionSet(c, avail, choice)
        return tbl

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: Union[str, Path], topo: Topology) -> "SelectionTable":
        return cls.from_text(Path(path).read_text(), topo)


STRATEGIES = ("optimal", "distance", "random")


def build_tables(topo: Topology, profile: Optional[TrafficProfile] = None, rho: float = DEFAULT_RHO,
                 strategy: str = "optimal", search: str = "auto", seed: int = 0,
                 k_nearest: Optional[int] = None) -> SelectionTable:
    """Selection tables for every chiplet, connected scenario and role.

    ``strategy`` picks the selector: ``"optimal"`` runs the cost optimizer,
    ``"distance"`` and ``"random"`` use :func:`baseline_select`.
    """
    if strategy not in STRATEGIES:
        raise SelectionError(f"unknown strategy {strategy!r}")
    profile = profile or TrafficProfile.uniform(topo)
    tbl = SelectionTable(meta={"strategy": strategy, "rho": rho, "seed": seed})
    # identical chiplets under identical rates give identical problems
    memo: Dict[tuple, SelectionSet] = {}
    for c in range(len(topo.chiplets)):
        spec = topo.chiplets[c]
        geometry = (spec.width, spec.height, tuple((v.chiplet_router.x, v.chiplet_router.y)
                                                   for v in topo.chiplet_vls[c]))
        for scenario in enumerate_scenarios(topo, c):
            local = scenario.local(topo, c)
            for role in ROLES:
                if strategy == "optimal":
                    rates = profile.rates(topo, c, role)
                    key = (geometry, local, tuple(rates))
                    if key not in memo:
                        s, _ = optimize_selection(topo, c, scenario, rates, rho, search, k_nearest)
                        memo[key] = s
                    s = memo[key]
                    s = SelectionSet(c, s.available, s.choice)
                elif strategy == "distance":
                    s = baseline_select("distance", scenario, c, topo)
                else:
                    # separate streams per role so the two tables are independent draws
                    s = baseline_select("random", scenario, c, topo, seed=seed * 2 + ROLES.index(role))
                tbl.entries[(c, local, role)] = s
    return tbl
