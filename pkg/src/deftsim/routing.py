"""
Deadlock-free routing for 2.5D chiplet systems with two virtual networks.

Every inter-chiplet packet crosses two intermediate destinations: a VL of
the source chiplet (chosen at injection) and a VL of the destination chiplet
(chosen when the packet enters the interposer).  Each of the three
intra-layer legs is routed with XY dimension order.

Virtual networks (VN0, VN1) are governed by three rules:

1. a packet may move from VN0 to VN1 but never back;
2. in VN0, a turn from the Up channel into a horizontal channel is illegal;
3. in VN1, a turn from a horizontal channel into the Down channel is illegal.

Rules 2 and 3 restrict turns that stay inside one VN.  A hop that moves the
packet from VN0 into VN1 is a cross-network dependency and only Rule 1
applies to it.

VN assignment events follow the routing algorithm: a source may
round-robin between the VNs when it is on the interposer, when the
destination is on its own chiplet, or when it is the boundary router of the
VL it leaves through; other inter-chiplet sources start in VN0.  A boundary
router round-robins again when a VN0 packet goes down to the interposer, and
moves every packet arriving from the interposer into VN1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .topology import HORIZONTAL, Port, Topology, VerticalLink
from .vlselect import FaultScenario, SelectionTable


class VN(enum.IntEnum):
    VN0 = 0
    VN1 = 1


class Phase(enum.Enum):
    SOURCE_CHIPLET = "source_chiplet"
    INTERPOSER = "interposer"
    DEST_CHIPLET = "dest_chiplet"
    INTRA_ONLY = "intra_only"


class Event(enum.Enum):
    GOING_TO_INTERPOSER = "going_to_interposer"
    COMING_FROM_INTERPOSER = "coming_from_interposer"
    TRANSIT = "transit"


ALL_RULES: FrozenSet[int] = frozenset({1, 2, 3})


class RoutingError(RuntimeError):
    """The routing function produced an illegal move (a bug or a sabotaged rule set)."""


class UnroutableError(RuntimeError):
    """No fault-free VL connects the source or destination chiplet."""


def allowed_turn(vn: VN, in_port: Port, out_port: Port, rules: FrozenSet[int] = ALL_RULES) -> bool:
    """Whether a packet staying in ``vn`` may turn from ``in_port`` to ``out_port``."""
    if 2 in rules and vn == VN.VN0 and in_port == Port.UP and out_port in HORIZONTAL:
        return False
    if 3 in rules and vn == VN.VN1 and in_port in HORIZONTAL and out_port == Port.DOWN:
        return False
    return True


def legal_move(vn_in: VN, vn_out: VN, in_port: Port, out_port: Port,
               rules: FrozenSet[int] = ALL_RULES) -> bool:
    if vn_in == vn_out:
        return allowed_turn(vn_in, in_port, out_port, rules)
    if vn_in == VN.VN1 and 1 in rules:
        return False
    return True


class RoundRobinState:
    """Per-router one-bit VN counters: one for injection, one for Down reassignment.

    Each counter holds the VN handed out next and toggles after use.
    """

    def __init__(self, num_routers: int):
        self.inject = [0] * num_routers
        self.down = [0] * num_routers

    def next_inject(self, router: int) -> VN:
        bit = self.inject[router]
        self.inject[router] = bit ^ 1
        return VN(bit)

    def next_down(self, router: int) -> VN:
        bit = self.down[router]
        self.down[router] = bit ^ 1
        return VN(bit)


class ForcedChoices(RoundRobinState):
    """Round-robin stand-in that replays a fixed sequence of VN outcomes.

    Used to enumerate every VN trajectory a packet can take.  Once the
    sequence is exhausted further draws return VN0 and are counted in
    ``overflow``.
    """

    def __init__(self, outcomes: Sequence[int]):
        self.outcomes = list(outcomes)
        self.used = 0
        self.overflow = 0

    def _draw(self) -> VN:
        if self.used < len(self.outcomes):
            bit = self.outcomes[self.used]
            self.used += 1
            return VN(bit)
        self.overflow += 1
        return VN.VN0

    def next_inject(self, router: int) -> VN:
        return self._draw()

    def next_down(self, router: int) -> VN:
        return self._draw()


def vn_transition(current: VN, at: int, event: Event, rr: RoundRobinState,
                  rules: FrozenSet[int] = ALL_RULES) -> VN:
    """VN for the next channel at a VN-assignment event.

    Going down to the interposer round-robins, except that a VN1 packet stays
    in VN1 without consuming the counter.  Arriving from the interposer moves
    the packet to VN1.  Anything else keeps the current VN.
    """
    if event == Event.GOING_TO_INTERPOSER:
        if current == VN.VN1 and 1 in rules:
            return VN.VN1
        return rr.next_down(at)
    if event == Event.COMING_FROM_INTERPOSER:
        return VN.VN1 if 2 in rules else current
    return current


def vn_assign_at_source(src: int, dst: int, rr: RoundRobinState, topo: Topology,
                        first_vl: Optional[VerticalLink] = None,
                        rules: FrozenSet[int] = ALL_RULES) -> VN:
    """Initial VN of a packet injected at ``src``.

    A boundary router only round-robins for packets leaving through its own
    VL: a VN1 packet that first travels horizontally to another boundary
    router could not legally turn into that router's Down channel.  When
    ``first_vl`` is None the boundary test falls back to "src has a VL".
    """
    src_layer, dst_layer = topo.layer[src], topo.layer[dst]
    if src_layer < 0 or src_layer == dst_layer:
        return rr.next_inject(src)
    if topo.is_boundary(src):
        own = topo.vl_at[src]
        if first_vl is None or first_vl.id == own.id:
            return rr.next_inject(src)
    if 1 not in rules or 3 not in rules:
        # with either rule lifted, VN1 can still reach the interposer
        return rr.next_inject(src)
    return VN.VN0


@dataclass
class RouteState:
    """Routing header of a packet; routers update it in place."""

    vn: VN
    src: int
    dst: int
    first_intermediate: Optional[VerticalLink] = None
    second_intermediate: Optional[VerticalLink] = None
    phase: Phase = Phase.INTRA_ONLY

    def copy(self) -> "RouteState":
        return replace(self)


def _phase_of(topo: Topology, st: RouteState, cur: int) -> Phase:
    src_layer, dst_layer, cur_layer = topo.layer[st.src], topo.layer[st.dst], topo.layer[cur]
    if src_layer == dst_layer:
        return Phase.INTRA_ONLY
    if cur_layer < 0:
        return Phase.INTERPOSER
    if cur_layer == src_layer:
        return Phase.SOURCE_CHIPLET
    return Phase.DEST_CHIPLET


def new_route(topo: Topology, tables: SelectionTable, scenario: FaultScenario,
              src: int, dst: int, rr: RoundRobinState,
              rules: FrozenSet[int] = ALL_RULES,
              first_vl: Optional[VerticalLink] = None) -> RouteState:
    """Header for a packet injected at ``src``; picks the first intermediate VL.

    Raises :class:`UnroutableError` when the source or destination chiplet
    has no usable VL under ``scenario``.
    """
    if src == dst:
        raise ValueError("source and destination coincide")
    src_layer, dst_layer = topo.layer[src], topo.layer[dst]
    if src_layer >= 0 and src_layer != dst_layer:
        if first_vl is None:
            first_vl = tables.select(topo, src, scenario, "source")
        if first_vl is None or first_vl.id in scenario.faulty:
            raise UnroutableError(f"no usable VL leaves chiplet {src_layer} for {topo.router(src)}")
    else:
        first_vl = None
    if dst_layer >= 0 and dst_layer != src_layer:
        if tables.select(topo, dst, scenario, "dest") is None:
            raise UnroutableError(f"no usable VL enters chiplet {dst_layer} for {topo.router(dst)}")
    vn = vn_assign_at_source(src, dst, rr, topo, first_vl, rules)
    st = RouteState(vn=vn, src=src, dst=dst, first_intermediate=first_vl)
    st.phase = _phase_of(topo, st, src)
    return st


def _xy_port(topo: Topology, cur: int, target: int) -> Port:
    dx = topo.xs[target] - topo.xs[cur]
    if dx > 0:
        return Port.EAST
    if dx < 0:
        return Port.WEST
    dy = topo.ys[target] - topo.ys[cur]
    if dy > 0:
        return Port.SOUTH
    return Port.NORTH


def compute_route(state: RouteState, current: int, in_port: Port, topo: Topology,
                  tables: SelectionTable, scenario: FaultScenario, rr: RoundRobinState,
                  rules: FrozenSet[int] = ALL_RULES) -> Tuple[Port, VN]:
    """Output port and VN of the next channel for a head flit at ``current``.

    ``in_port`` is the channel the head arrived on (``Port.LOCAL`` at the
    source).  The header is updated in place: ``vn`` becomes the returned VN,
    the phase follows the packet, and the second intermediate VL is fixed the
    first time the packet is routed on the interposer.
    """
    st = state
    vn = st.vn
    phase = _phase_of(topo, st, current)
    st.phase = phase
    event = Event.TRANSIT
    if current == st.dst:
        out = Port.LOCAL
        if in_port == Port.UP:
            event = Event.COMING_FROM_INTERPOSER
    elif phase == Phase.INTRA_ONLY or phase == Phase.DEST_CHIPLET:
        out = _xy_port(topo, current, st.dst)
        if in_port == Port.UP:
            event = Event.COMING_FROM_INTERPOSER
    elif phase == Phase.SOURCE_CHIPLET:
        vl = st.first_intermediate
        if vl is None:
            raise UnroutableError("packet on source chiplet without a first intermediate")
        target = topo.index(vl.chiplet_router)
        if current == target:
            if vl.id in scenario.faulty:
                raise UnroutableError(f"VL {vl.id} failed under the packet")
            out = Port.DOWN
            if current != st.src:
                event = Event.GOING_TO_INTERPOSER
        else:
            out = _xy_port(topo, current, target)
    else:  # interposer
        if topo.layer[st.dst] < 0:
            out = _xy_port(topo, current, st.dst)
        else:
            if st.second_intermediate is None:
                st.second_intermediate = tables.select(topo, st.dst, scenario, "dest")
                if st.second_intermediate is None:
                    raise UnroutableError(f"no usable VL enters chiplet {topo.layer[st.dst]}")
            vl = st.second_intermediate
            target = topo.index(vl.interposer_router)
            if current == target:
                if vl.id in scenario.faulty:
                    raise UnroutableError(f"VL {vl.id} failed under the packet")
                out = Port.UP
            else:
                out = _xy_port(topo, current, target)

    nvn = vn_transition(vn, current, event, rr, rules)
    if not legal_move(vn, nvn, in_port, out, rules):
        alt = VN(1 - nvn)
        if legal_move(vn, alt, in_port, out, rules):
            nvn = alt
        else:
            raise RoutingError(
                f"no legal VN for {topo.router(current)} {in_port.name}->{out.name} from {vn.name}")
    st.vn = nvn
    return out, nvn


class Hop(NamedTuple):
    router: int
    in_port: Port
    out_port: Port
    vn_in: VN
    vn_out: VN


def walk_route(topo: Topology, tables: SelectionTable, scenario: FaultScenario,
               src: int, dst: int, rr: RoundRobinState,
               rules: FrozenSet[int] = ALL_RULES,
               first_vl: Optional[VerticalLink] = None,
               second_vl: Optional[VerticalLink] = None) -> Tuple[RouteState, List[Hop]]:
    """Follow ``compute_route`` from ``src`` to ejection at ``dst``.

    ``first_vl``/``second_vl`` override the table choices.  The final hop has
    ``out_port == Port.LOCAL``.
    """
    st = new_route(topo, tables, scenario, src, dst, rr, rules, first_vl)
    if second_vl is not None:
        st.second_intermediate = second_vl
    hops: List[Hop] = []
    cur, in_port = src, Port.LOCAL
    limit = 4 * topo.num_routers + 4
    while True:
        vn_in = st.vn
        out, vn_out = compute_route(st, cur, in_port, topo, tables, scenario, rr, rules)
        hops.append(Hop(cur, in_port, out, vn_in, vn_out))
        if out == Port.LOCAL:
            return st, hops
        nxt = topo.neighbors[cur][out]
        if nxt < 0:
            raise RoutingError(f"{topo.router(cur)} has no {out.name} neighbour")
        cur, in_port = nxt, out
        if len(hops) > limit:
            raise RoutingError("route does not terminate")


def hop_bound(state: RouteState, topo: Topology) -> int:
    """Exact link-hop count of the route described by ``state``.

    Sum of the XY legs plus one hop for each vertical crossing.  Needs the
    intermediates that apply to the route to be resolved.
    """
    src, dst = state.src, state.dst
    if src == dst:
        return 0
    sl, dl = topo.layer[src], topo.layer[dst]

    def manhattan(a: int, b: int) -> int:
        return abs(topo.xs[a] - topo.xs[b]) + abs(topo.ys[a] - topo.ys[b])

    if sl == dl:
        return manhattan(src, dst)
    total = 0
    if sl >= 0:
        v1 = state.first_intermediate
        if v1 is None:
            raise ValueError("first intermediate not resolved")
        total += manhattan(src, topo.index(v1.chiplet_router)) + 1
        entry = topo.index(v1.interposer_router)
    else:
        entry = src
    if dl >= 0:
        v2 = state.second_intermediate
        if v2 is None:
            raise ValueError("second intermediate not resolved")
        total += manhattan(entry, topo.index(v2.interposer_router)) + 1
        total += manhattan(topo.index(v2.chiplet_router), dst)
    else:
        total += manhattan(entry, dst)
    return total
