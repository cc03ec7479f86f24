"""Synthetic traffic patterns and trace replay."""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from ..topology import Topology

PATTERNS = ("uniform", "localized", "hotspot", "trace")


class TraceFormatError(ValueError):
    pass


@dataclass
class TrafficSpec:
    """What to inject and for how long.

    ``rate`` is in packets per endpoint per cycle (Bernoulli arrivals).
    Packets generated in ``[warmup, warmup + measure)`` are measured; after
    that generation stops and the network drains, up to ``drain_cap`` cycles
    in total.  Trace runs ignore ``rate`` and measure every trace packet.
    """

    kind: str = "uniform"
    rate: float = 0.01
    seed: int = 1
    warmup: int = 10_000
    measure: int = 50_000
    drain_cap: int = 200_000
    intra_fraction: float = 0.4
    hotspots: Optional[Sequence[int]] = None
    hotspot_prob: float = 0.10
    trace: Optional[Union[str, Path]] = None

    def __post_init__(self) -> None:
        if self.kind not in PATTERNS:
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        if not 0.0 <= self.intra_fraction <= 1.0:
            raise ValueError("intra_fraction must lie in [0, 1]")
        if self.kind == "hotspot" and self.hotspots is not None:
            if self.hotspot_prob * len(self.hotspots) > 1.0:
                raise ValueError("hotspot probabilities sum above 1")
        if self.kind == "trace" and self.trace is None:
            raise ValueError("trace traffic needs a trace path")

    @property
    def gen_end(self) -> int:
        return self.warmup + self.measure


def default_hotspots(topo: Topology, count: int = 3) -> List[int]:
    """Central routers of the chiplets closest to the interposer centre.

    One hotspot per chiplet, chiplets ordered by how close their centre lies
    to the middle of the interposer (ties by chiplet index); inside a chiplet
    the router nearest the interposer centre is used.
    """
    cx, cy = (topo.interposer_width - 1) / 2, (topo.interposer_height - 1) / 2

    def gdist(i: int) -> float:
        gx, gy = topo.global_xy(i)
        return abs(gx - cx) + abs(gy - cy)

    chosen = []
    order = sorted(range(len(topo.chiplets)),
                   key=lambda c: (abs(topo.chiplets[c].origin_x + (topo.chiplets[c].width - 1) / 2 - cx)
                                  + abs(topo.chiplets[c].origin_y + (topo.chiplets[c].height - 1) / 2 - cy), c))
    for c in order[:count]:
        routers = list(topo.chiplet_routers(c))
        chosen.append(min(routers, key=lambda i: (gdist(i), i)))
    return chosen


class SyntheticSource:
    """Bernoulli packet arrivals at every endpoint, seeded and deterministic.

    Inter-arrival gaps are geometric, so each endpoint is equivalent to an
    independent coin flip per cycle with probability ``rate``.
    """

    def __init__(self, topo: Topology, spec: TrafficSpec):
        self.topo = topo
        self.spec = spec
        self.rng = random.Random(spec.seed)
        self.endpoints = list(topo.endpoints)
        self.hotspots = list(spec.hotspots) if spec.hotspots is not None else default_hotspots(topo)
        ends = set(self.endpoints)
        for h in self.hotspots:
            if h not in ends:
                raise ValueError(f"hotspot {h} is not an endpoint")
        # local group: same chiplet, or the interposer endpoints as one group
        self.group = {}
        for e in self.endpoints:
            self.group.setdefault(topo.layer[e], []).append(e)
        self.heap: List[Tuple[int, int]] = []
        if spec.rate > 0:
            for e in self.endpoints:
                heapq.heappush(self.heap, (self._gap() - 1, e))

    def _gap(self) -> int:
        p = self.spec.rate
        if p >= 1.0:
            return 1
        u = 1.0 - self.rng.random()
        return int(math.log(u) / math.log1p(-p)) + 1

    def _pick_other(self, pool: Sequence[int], src: int) -> int:
        while True:
            d = pool[self.rng.randrange(len(pool))]
            if d != src:
                return d

    def destination(self, src: int) -> int:
        spec = self.spec
        if spec.kind == "hotspot":
            u = self.rng.random()
            for k, h in enumerate(self.hotspots):
                if u < spec.hotspot_prob * (k + 1):
                    if h != src:
                        return h
                    break
            return self._pick_other(self.endpoints, src)
        if spec.kind == "localized":
            local = self.group[self.topo.layer[src]]
            if self.rng.random() < spec.intra_fraction and len(local) > 1:
                return self._pick_other(local, src)
            remote = [e for e in self.endpoints if self.topo.layer[e] != self.topo.layer[src]]
            if not remote:
                return self._pick_other(local, src)
            return remote[self.rng.randrange(len(remote))]
        return self._pick_other(self.endpoints, src)

    def packets_at(self, cycle: int) -> List[Tuple[int, int]]:
        """(src, dst) pairs generated at ``cycle``; call with increasing cycles."""
        out = []
        heap = self.heap
        while heap and heap[0][0] <= cycle:
            t, src = heapq.heappop(heap)
            out.append((src, self.destination(src)))
            heapq.heappush(heap, (t + self._gap(), src))
        return out


def replay_trace(path: Union[str, Path], topo: Optional[Topology] = None) -> List[Tuple[int, int, int]]:
    """Parse a trace file into ``(cycle, src, dst)`` tuples.

    One packet per line: ``cycle,src_router,dst_router`` with dense router
    ids.  Blank lines and lines starting with ``#`` are skipped.  Cycles must
    be non-decreasing.  With ``topo`` the ids are range-checked against the
    endpoints.
    """
    out = []
    ends = set(topo.endpoints) if topo is not None else None
    last = -1
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise TraceFormatError(f"line {lineno}: expected 'cycle,src,dst', got {raw!r}")
        try:
            cycle, src, dst = (int(p) for p in parts)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: non-integer field in {raw!r}") from None
        if cycle < 0 or cycle < last:
            raise TraceFormatError(f"line {lineno}: cycle {cycle} out of order")
        if src == dst:
            raise TraceFormatError(f"line {lineno}: source equals destination ({src})")
        if ends is not None:
            for r in (src, dst):
                if r not in ends:
                    raise TraceFormatError(f"line {lineno}: router {r} is not an endpoint")
        last = cycle
        out.append((cycle, src, dst))
    return out


def write_trace(path: Union[str, Path], packets: Sequence[Tuple[int, int, int]]) -> None:
    lines = ["# cycle,src_router,dst_router"]
    lines += [f"{c},{s},{d}" for c, s, d in packets]
    Path(path).write_text("\n".join(lines) + "\n")


class TraceSource:
    def __init__(self, packets: Sequence[Tuple[int, int, int]]):
        self.packets = list(packets)
        self.pos = 0

    def packets_at(self, cycle: int) -> List[Tuple[int, int]]:
        out = []
        pk = self.packets
        while self.pos < len(pk) and pk[self.pos][0] <= cycle:
            _, s, d = pk[self.pos]
            out.append((s, d))
            self.pos += 1
        return out

    @property
    def last_cycle(self) -> int:
        return self.packets[-1][0] if self.packets else -1
