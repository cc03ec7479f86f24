"""Cycle-accurate wormhole simulator with credit-based flow control.

Pipeline model (two stages per hop):

* a flit written into an input buffer at cycle ``t`` may compete for the
  switch from cycle ``t + 1``;
* a head flit is routed and allocated an output VC in the cycle it first
  competes, and may cross the switch in that same cycle;
* a flit crossing the switch at cycle ``t`` lands in the downstream buffer
  at ``t + 1`` and the credit it frees upstream comes back at ``t + 1``.

The network interface writes one flit per cycle into the local input VC.  A
packet generated at cycle ``g`` whose route has ``H`` link hops therefore has
zero-load latency ``2 * (H + 1) + (flits - 1)``: its head leaves the source
router at ``g + 1``, spends two cycles per hop, and the tail trails the head
by ``flits - 1`` cycles.  See :func:`zero_load_latency`.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, FrozenSet, List, Optional, Tuple

from ..routing import (
    ALL_RULES,
    VN,
    RoundRobinState,
    RouteState,
    RoutingError,
    UnroutableError,
    compute_route,
    hop_bound,
    new_route,
)
from ..topology import Port, Topology
from ..vlselect import FaultScenario, SelectionTable
from .metrics import Metrics
from .traffic import SyntheticSource, TraceSource, TrafficSpec, replay_trace

NPORTS = len(Port)
PORTS = list(Port)
LOCAL = int(Port.LOCAL)
UP = int(Port.UP)
DOWN = int(Port.DOWN)

# flit kinds
HEAD, BODY, TAIL, SINGLE = 0, 1, 2, 3


class EngineError(RuntimeError):
    """An engine invariant broke; this is a simulator bug, not a traffic effect."""


class DeadlockSuspected(EngineError):
    pass


class FaultInjectionError(ValueError):
    pass


@dataclass
class SimConfig:
    packet_flits: int = 8
    flit_bits: int = 32
    buffer_depth: int = 4
    vcs_per_vn: int = 1
    watchdog: int = 20_000
    watchdog_every: int = 1_000
    check_every: int = 0
    backlog_cap: int = 64
    allow_disconnect: bool = False

    def __post_init__(self) -> None:
        if self.packet_flits < 1 or self.buffer_depth < 1 or self.vcs_per_vn < 1:
            raise ValueError("packet_flits, buffer_depth and vcs_per_vn must be positive")


def zero_load_latency(hops: int, packet_flits: int = 8) -> int:
    """Latency of a packet crossing ``hops`` links through an idle network."""
    return 2 * (hops + 1) + packet_flits - 1


class Packet:
    __slots__ = ("id", "src", "dst", "route", "gen", "inject", "eject", "hops",
                 "sent", "measured", "crossed", "last_move", "vn_path", "inj_vn")

    def __init__(self, pid: int, src: int, dst: int, gen: int, measured: bool):
        self.id = pid
        self.src = src
        self.dst = dst
        self.route: Optional[RouteState] = None
        self.gen = gen
        self.inject = -1
        self.eject = -1
        self.hops = 0
        self.sent = 0
        self.measured = measured
        self.crossed = 0
        self.last_move = gen
        self.vn_path: Optional[List[int]] = None
        self.inj_vn = 0


class _TableCache:
    """Memoises ``SelectionTable.select`` for one fault scenario."""

    def __init__(self, tables: SelectionTable):
        self.tables = tables
        self.memo: Dict[Tuple[int, str], object] = {}

    def select(self, topo, router, scenario, role):
        key = (router, role)
        try:
            return self.memo[key]
        except KeyError:
            vl = self.memo[key] = self.tables.select(topo, router, scenario, role)
            return vl


class Simulator:
    """One simulation instance.  Call :meth:`step` per cycle or :meth:`run`."""

    def __init__(self, topo: Topology, tables: SelectionTable, scenario: FaultScenario = FaultScenario(),
                 traffic: Optional[TrafficSpec] = None, config: Optional[SimConfig] = None,
                 rules: FrozenSet[int] = ALL_RULES, record_paths: bool = False):
        self.topo = topo
        self.tables = tables
        self.cfg = config or SimConfig()
        self.rules = rules
        self.record_paths = record_paths
        if not scenario.connected(topo) and not self.cfg.allow_disconnect:
            raise FaultInjectionError(f"scenario {scenario} disconnects a chiplet")
        self.scenario = scenario
        self._cache = _TableCache(tables)
        self.traffic = traffic or TrafficSpec(rate=0.0)
        if self.traffic.kind == "trace":
            self.source = TraceSource(replay_trace(self.traffic.trace, topo))
        else:
            self.source = SyntheticSource(topo, self.traffic)
        self.rr = RoundRobinState(topo.num_routers)
        self.cycle = 0
        self._faults: List[Tuple[int, int, FaultScenario]] = []
        self._build()
        self.metrics = Metrics(rate=self.traffic.rate if self.traffic.kind != "trace" else 0.0,
                               vl_traversals=[0] * len(topo.vls), vl_last_use=[-1] * len(topo.vls),
                               endpoints=len(topo.endpoints))
        self.delivered_packets: List[Packet] = []

    # ----------------------------------------------------------------- set-up
    def _build(self) -> None:
        topo, cfg = self.topo, self.cfg
        n = topo.num_routers
        self.nvc = nvc = 2 * cfg.vcs_per_vn
        size = n * NPORTS * nvc
        self.bufs: List[Optional[Deque]] = [None] * size
        self.out_port = [-1] * size
        self.out_vc = [-1] * size
        self.owner_pkt: List[Optional[Packet]] = [None] * size
        self.vc_owner = [-1] * size          # output VC -> input buffer holding it
        self.credits = [0] * size
        self.down_buf = [-1] * size          # output VC -> downstream input buffer
        self.up_ovc = [-1] * size            # input buffer -> upstream output VC
        self.buf_router = [b // (NPORTS * nvc) for b in range(size)]
        self.buf_port = [(b // nvc) % NPORTS for b in range(size)]
        self.buf_class = [(b % nvc) // cfg.vcs_per_vn for b in range(size)]
        self._next_vn = [0] * size
        self.buf_bit = [0] * size            # bit of the buffer in its router's non-empty mask
        self.in_vcs: List[List[int]] = [[] for _ in range(n)]
        endpoints = set(topo.endpoints)
        for r in range(n):
            for p in PORTS:
                if p == Port.LOCAL:
                    if r not in endpoints:
                        continue
                    src = -1
                else:
                    # the input arriving over direction p comes from the router opposite to p
                    src = topo.neighbors[r][_OPPOSITE[p]]
                    if src < 0:
                        continue
                for vc in range(nvc):
                    b = (r * NPORTS + int(p)) * nvc + vc
                    self.bufs[b] = deque()
                    self.buf_bit[b] = 1 << len(self.in_vcs[r])
                    self.in_vcs[r].append(b)
                    if src >= 0:
                        ob = (src * NPORTS + int(p)) * nvc + vc
                        self.down_buf[ob] = b
                        self.up_ovc[b] = ob
                        self.credits[ob] = cfg.buffer_depth
        self.nz = [0] * n                    # per router: mask of non-empty input VCs
        self.rr_ptr = [0] * n
        self.active: set = set()
        self.credit_next: List[int] = []
        self.src_queue: List[Deque[Packet]] = [deque() for _ in range(n)]
        self.injecting: set = set()
        self.inflight: Dict[int, Packet] = {}
        self.next_pid = 0
        self.queued = 0
        self.flits_injected = 0
        self.flits_ejected = 0
        self.flits_purged = 0

    # ----------------------------------------------------------------- faults
    def inject_fault(self, scenario: FaultScenario, at_cycle: int) -> None:
        """Switch to ``scenario`` at the start of cycle ``at_cycle``."""
        if not scenario.connected(self.topo) and not self.cfg.allow_disconnect:
            raise FaultInjectionError(f"scenario {scenario} disconnects a chiplet")
        if at_cycle < self.cycle:
            raise FaultInjectionError(f"cycle {at_cycle} already simulated")
        heapq.heappush(self._faults, (at_cycle, len(self._faults), scenario))

    def _apply_fault(self, scenario: FaultScenario) -> None:
        self.scenario = scenario
        self._cache = _TableCache(self.tables)
        bad = scenario.faulty
        victims = set()
        for pkt in self.inflight.values():
            st = pkt.route
            v1, v2 = st.first_intermediate, st.second_intermediate
            sl, dl = self.topo.layer[pkt.src], self.topo.layer[pkt.dst]
            if sl == dl:
                continue
            need_first = sl >= 0 and pkt.crossed == 0
            if need_first and v1.id in bad:
                victims.add(pkt.id)
            elif dl >= 0 and v2 is not None and v2.id in bad and pkt.crossed < (2 if sl >= 0 else 1):
                victims.add(pkt.id)
            elif dl >= 0 and v2 is None and not scenario.chiplet_connected(self.topo, dl):
                victims.add(pkt.id)
        if victims:
            self._purge(victims)

    def _purge(self, victims: set) -> None:
        for b, buf in enumerate(self.bufs):
            if buf is None:
                continue
            owner = self.owner_pkt[b]
            if owner is not None and owner.id in victims:
                ovc = self.out_vc[b]
                if ovc >= 0:
                    self.vc_owner[ovc] = -1
                self.out_port[b] = -1
                self.out_vc[b] = -1
                self.owner_pkt[b] = None
            if not buf or not any(f[1].id in victims for f in buf):
                continue
            keep = deque(f for f in buf if f[1].id not in victims)
            dropped = len(buf) - len(keep)
            self.bufs[b] = keep
            if not keep:
                self.nz[self.buf_router[b]] &= ~self.buf_bit[b]
            self.flits_purged += dropped
            ub = self.up_ovc[b]
            if ub >= 0:
                self.credit_next.extend([ub] * dropped)
        for q_router in list(self.injecting):
            q = self.src_queue[q_router]
            if q and q[0].id in victims:
                q.popleft()
                self.queued -= 1
                if not q:
                    self.injecting.discard(q_router)
        for pid in victims:
            pkt = self.inflight.pop(pid)
            # flits never pushed by the NI do not count as purged
            if pkt.measured:
                self.metrics.unreachable += 1
            self.metrics.purged += 1

    # ------------------------------------------------------------------- step
    def _generate(self, t: int) -> None:
        spec = self.traffic
        if spec.kind != "trace" and t >= spec.gen_end:
            return
        measured = spec.kind == "trace" or spec.warmup <= t < spec.gen_end
        layer = self.topo.layer
        for src, dst in self.source.packets_at(t):
            pkt = Packet(self.next_pid, src, dst, t, measured)
            self.next_pid += 1
            if measured:
                self.metrics.injected += 1
                if layer[src] == layer[dst]:
                    self.metrics.intra_packets += 1
            self.src_queue[src].append(pkt)
            self.queued += 1
            self.injecting.add(src)

    def _inject(self, t: int) -> None:
        cfg = self.cfg
        nvc = self.nvc
        done = []
        for r in self.injecting:
            q = self.src_queue[r]
            pkt = q[0]
            if pkt.route is None:
                try:
                    pkt.route = new_route(self.topo, self._cache, self.scenario, pkt.src, pkt.dst,
                                          self.rr, self.rules)
                except UnroutableError:
                    q.popleft()
                    self.queued -= 1
                    if pkt.measured:
                        self.metrics.unreachable += 1
                    if not q:
                        done.append(r)
                    continue
                pkt.inject = t
                pkt.last_move = t
                pkt.inj_vn = int(pkt.route.vn)
                self.inflight[pkt.id] = pkt
                if self.record_paths:
                    pkt.vn_path = [int(pkt.route.vn)]
            # the header VN changes as the head moves on; body flits follow the injection VC
            vn = pkt.inj_vn
            b = (r * NPORTS + LOCAL) * nvc + vn * cfg.vcs_per_vn
            buf = self.bufs[b]
            if len(buf) >= cfg.buffer_depth:
                continue
            k = pkt.sent
            last = cfg.packet_flits - 1
            kind = SINGLE if last == 0 else (HEAD if k == 0 else (TAIL if k == last else BODY))
            buf.append((t + 1, pkt, kind, vn))
            pkt.sent = k + 1
            self.flits_injected += 1
            self.nz[r] |= self.buf_bit[b]
            self.active.add(r)
            if k == last:
                q.popleft()
                self.queued -= 1
                if not q:
                    done.append(r)
        for r in done:
            self.injecting.discard(r)

    def step(self) -> None:
        """Simulate one cycle."""
        t = self.cycle
        if self.credit_next:
            credits = self.credits
            for ob in self.credit_next:
                credits[ob] += 1
            self.credit_next = []
        while self._faults and self._faults[0][0] <= t:
            self._apply_fault(heapq.heappop(self._faults)[2])
        self._generate(t)
        if self.injecting:
            self._inject(t)
        if self.active:
            self._switch(t)
        self.cycle = t + 1
        cfg = self.cfg
        if cfg.check_every and self.cycle % cfg.check_every == 0:
            self.check_invariants()
        if cfg.watchdog_every and self.cycle % cfg.watchdog_every == 0:
            self._watchdog()

    def _switch(self, t: int) -> None:
        topo = self.topo
        bufs = self.bufs
        out_port, out_vc, owner_pkt = self.out_port, self.out_vc, self.owner_pkt
        vc_owner, credits, down_buf = self.vc_owner, self.credits, self.down_buf
        up_ovc, buf_port, buf_class = self.up_ovc, self.buf_port, self.buf_class
        buf_router, buf_bit, next_vn = self.buf_router, self.buf_bit, self._next_vn
        nz, active, in_vcs, rr_ptr = self.nz, self.active, self.in_vcs, self.rr_ptr
        credit_next = self.credit_next
        nvc, vpv = self.nvc, self.cfg.vcs_per_vn
        m = self.metrics
        if self.traffic.kind == "trace":
            measuring = True
        else:
            measuring = self.traffic.warmup <= t < self.traffic.gen_end
        vn_occ = m.vn_occupancy
        scenario, rr, rules, cache = self.scenario, self.rr, self.rules, self._cache
        record = self.record_paths
        idle = []
        for r in list(active):
            vcs = in_vcs[r]
            n = len(vcs)
            start = rr_ptr[r]
            rr_ptr[r] = start + 1 if start + 1 < n else 0
            mask = nz[r]
            # rotate so that bit 0 is the VC with round-robin priority
            rot = ((mask >> start) | (mask << (n - start))) & ((1 << n) - 1)
            used_in = 0
            used_out = 0
            while rot:
                low = rot & -rot
                rot ^= low
                idx = low.bit_length() - 1 + start
                if idx >= n:
                    idx -= n
                b = vcs[idx]
                buf = bufs[b]
                f = buf[0]
                if f[0] > t:
                    continue
                ip = buf_port[b]
                if used_in >> ip & 1:
                    continue
                pkt = f[1]
                op = out_port[b]
                if op < 0:
                    # head flit: route computation
                    if f[2] != HEAD and f[2] != SINGLE:
                        raise EngineError(f"non-head flit of packet {pkt.id} at a free VC")
                    vn_before = pkt.route.vn
                    port, nvn = compute_route(pkt.route, r, PORTS[ip], topo, cache, scenario, rr, rules)
                    if vn_before == VN.VN1 and nvn == VN.VN0:
                        raise EngineError(f"packet {pkt.id} moved from VN1 to VN0")
                    op = out_port[b] = int(port)
                    next_vn[b] = int(nvn)
                    owner_pkt[b] = pkt
                if used_out >> op & 1:
                    continue
                kind = f[2]
                if op == LOCAL:
                    buf.popleft()
                    self.flits_ejected += 1
                    if kind == TAIL or kind == SINGLE:
                        out_port[b] = -1
                        owner_pkt[b] = None
                        self._deliver(pkt, t)
                else:
                    ovc = out_vc[b]
                    if ovc < 0:
                        base = (r * NPORTS + op) * nvc + next_vn[b] * vpv
                        for j in range(vpv):
                            if vc_owner[base + j] < 0:
                                ovc = base + j
                                break
                        if ovc < 0:
                            continue
                        vc_owner[ovc] = b
                        out_vc[b] = ovc
                    if credits[ovc] <= 0:
                        continue
                    credits[ovc] -= 1
                    buf.popleft()
                    nb = down_buf[ovc]
                    vn_out = buf_class[nb]
                    bufs[nb].append((t + 2, pkt, kind, vn_out))
                    nr = buf_router[nb]
                    nz[nr] |= buf_bit[nb]
                    active.add(nr)
                    if kind == HEAD or kind == SINGLE:
                        pkt.hops += 1
                        if op == UP or op == DOWN:
                            pkt.crossed += 1
                            vl = topo.vl_at[r] if op == DOWN else topo.vl_at[nr]
                            m.vl_traversals[vl.id] += 1
                            m.vl_last_use[vl.id] = t
                        if record:
                            pkt.vn_path.append(vn_out)
                    if kind == TAIL or kind == SINGLE:
                        vc_owner[ovc] = -1
                        out_vc[b] = -1
                        out_port[b] = -1
                        owner_pkt[b] = None
                if not buf:
                    nz[r] &= ~buf_bit[b]
                pkt.last_move = t
                if measuring and ip != LOCAL:
                    # network channels only; the local input VC is the NI's injection queue
                    vn_occ[buf_class[b]] += t - f[0] + 2
                ub = up_ovc[b]
                if ub >= 0:
                    credit_next.append(ub)
                used_in |= 1 << ip
                used_out |= 1 << op
            if not nz[r]:
                idle.append(r)
        for r in idle:
            if not nz[r]:
                active.discard(r)

    def _deliver(self, pkt: Packet, t: int) -> None:
        pkt.eject = t + 1
        del self.inflight[pkt.id]
        bound = hop_bound(pkt.route, self.topo)
        if pkt.hops != bound:
            raise EngineError(f"packet {pkt.id} took {pkt.hops} hops, bound {bound}")
        m = self.metrics
        m.all_delivered += 1
        if pkt.measured:
            lat = pkt.eject - pkt.gen
            m.delivered += 1
            m.total_latency += lat
            m.total_hops += pkt.hops
            m.latency_hist[lat] += 1
        if self.record_paths:
            self.delivered_packets.append(pkt)

    # ------------------------------------------------------------- checking
    def _watchdog(self) -> None:
        limit = self.cycle - self.cfg.watchdog
        for pkt in self.inflight.values():
            if pkt.last_move < limit:
                st = pkt.route
                raise DeadlockSuspected(
                    f"packet {pkt.id} {self.topo.router(pkt.src)}->{self.topo.router(pkt.dst)} "
                    f"stalled since cycle {pkt.last_move} (now {self.cycle}); vn={st.vn.name} "
                    f"phase={st.phase.name} hops={pkt.hops}")

    def check_invariants(self) -> None:
        """Flit conservation, credit soundness and VN-class isolation."""
        depth = self.cfg.buffer_depth
        pending = {}
        for ob in self.credit_next:
            pending[ob] = pending.get(ob, 0) + 1
        in_buffers = 0
        for b, buf in enumerate(self.bufs):
            if buf is None:
                continue
            n = len(buf)
            in_buffers += n
            if n > depth:
                raise EngineError(f"buffer {b} holds {n} flits")
            cls = self.buf_class[b]
            prev = None
            for f in buf:
                if f[3] != cls:
                    raise EngineError(f"flit of packet {f[1].id} tagged VN{f[3]} in a VN{cls} buffer")
                # flits of different packets may follow each other but never interleave
                if prev is not None and prev[1] is not f[1] and prev[2] not in (TAIL, SINGLE):
                    raise EngineError(f"packets {prev[1].id} and {f[1].id} interleave in buffer {b}")
                prev = f
            ub = self.up_ovc[b]
            if ub >= 0:
                total = self.credits[ub] + n + pending.get(ub, 0)
                if total != depth:
                    raise EngineError(f"credit mismatch on channel {ub}: {total} != {depth}")
        if self.flits_injected != self.flits_ejected + self.flits_purged + in_buffers:
            raise EngineError(
                f"flit conservation: injected {self.flits_injected} != ejected {self.flits_ejected}"
                f" + purged {self.flits_purged} + buffered {in_buffers}")
        for b, buf in enumerate(self.bufs):
            if buf is not None and bool(buf) != bool(self.nz[self.buf_router[b]] & self.buf_bit[b]):
                raise EngineError(f"non-empty mask out of sync at buffer {b}")

    @property
    def idle(self) -> bool:
        return not self.active and not self.queued and not self.inflight

    # ------------------------------------------------------------------- run
    def run(self) -> Metrics:
        """Warm up, measure, then drain; returns the collected metrics."""
        spec = self.traffic
        if spec.kind == "trace":
            gen_end = self.source.last_cycle + 1
        else:
            gen_end = spec.gen_end
        cap = max(spec.drain_cap, gen_end)
        backlog_cap = self.cfg.backlog_cap * len(self.topo.endpoints)
        step = self.step
        while True:
            if self.cycle >= gen_end and self.idle and not self._faults:
                break
            if self.cycle >= cap or self.queued > backlog_cap:
                self.metrics.saturated = True
                break
            if self.cycle < gen_end or self._faults or not self.idle:
                step()
            # skip idle stretches of a trace quickly
            if (spec.kind == "trace" and self.idle and not self._faults
                    and self.source.pos < len(self.source.packets)):
                nxt = self.source.packets[self.source.pos][0]
                if nxt > self.cycle:
                    self.cycle = nxt
        m = self.metrics
        m.cycles = self.cycle
        m.measure_cycles = spec.measure if spec.kind != "trace" else gen_end
        if self.cfg.check_every:
            self.check_invariants()
        return m


_OPPOSITE = {
    Port.EAST: Port.WEST,
    Port.WEST: Port.EAST,
    Port.SOUTH: Port.NORTH,
    Port.NORTH: Port.SOUTH,
    Port.UP: Port.DOWN,
    Port.DOWN: Port.UP,
}
