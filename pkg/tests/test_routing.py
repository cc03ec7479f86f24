import itertools

import pytest

from deftsim.routing import (
    ALL_RULES,
    VN,
    Event,
    ForcedChoices,
    Phase,
    RoundRobinState,
    RouteState,
    RoutingError,
    UnroutableError,
    allowed_turn,
    compute_route,
    hop_bound,
    legal_move,
    new_route,
    vn_assign_at_source,
    vn_transition,
    walk_route,
)
from deftsim.topology import HORIZONTAL, Port, RouterId
from deftsim.vlselect import FAULT_FREE, FaultScenario


def test_turn_table():
    for h in HORIZONTAL:
        assert not allowed_turn(VN.VN0, Port.UP, h)
        assert allowed_turn(VN.VN1, Port.UP, h)
        assert not allowed_turn(VN.VN1, h, Port.DOWN)
        assert allowed_turn(VN.VN0, h, Port.DOWN)
        assert allowed_turn(VN.VN0, Port.DOWN, h) and allowed_turn(VN.VN1, Port.DOWN, h)
        for h2 in HORIZONTAL:
            assert allowed_turn(VN.VN0, h, h2) and allowed_turn(VN.VN1, h, h2)
    # lifted rules lift the restriction
    assert allowed_turn(VN.VN0, Port.UP, Port.EAST, ALL_RULES - {2})
    assert allowed_turn(VN.VN1, Port.EAST, Port.DOWN, ALL_RULES - {3})


def test_rule1_forbids_vn1_to_vn0():
    assert not legal_move(VN.VN1, VN.VN0, Port.EAST, Port.EAST)
    assert legal_move(VN.VN1, VN.VN0, Port.EAST, Port.EAST, frozenset({2, 3}))
    # a cross-network hop is not a same-VN turn
    assert legal_move(VN.VN0, VN.VN1, Port.EAST, Port.DOWN)
    assert legal_move(VN.VN0, VN.VN1, Port.UP, Port.EAST)


def test_round_robin_alternates_per_router():
    rr = RoundRobinState(3)
    assert [rr.next_inject(0) for _ in range(4)] == [VN.VN0, VN.VN1, VN.VN0, VN.VN1]
    assert rr.next_inject(1) == VN.VN0
    assert [rr.next_down(0) for _ in range(2)] == [VN.VN0, VN.VN1]


def test_vn_transition_events():
    rr = RoundRobinState(1)
    assert vn_transition(VN.VN1, 0, Event.GOING_TO_INTERPOSER, rr) == VN.VN1
    assert rr.down == [0]  # VN1 does not consume the counter
    assert vn_transition(VN.VN0, 0, Event.GOING_TO_INTERPOSER, rr) == VN.VN0
    assert vn_transition(VN.VN0, 0, Event.GOING_TO_INTERPOSER, rr) == VN.VN1
    assert vn_transition(VN.VN0, 0, Event.COMING_FROM_INTERPOSER, rr) == VN.VN1
    assert vn_transition(VN.VN1, 0, Event.TRANSIT, rr) == VN.VN1


def test_source_assignment(base):
    rr = RoundRobinState(base.num_routers)
    inner = base.index(RouterId(0, 1, 1))
    other = base.index(RouterId(1, 1, 1))
    ip = base.index(RouterId(None, 0, 0))
    assert vn_assign_at_source(inner, other, rr, base) == VN.VN0
    assert vn_assign_at_source(inner, other, rr, base) == VN.VN0
    # intra-chiplet and interposer sources alternate
    assert [vn_assign_at_source(inner, base.index(RouterId(0, 3, 3)), rr, base) for _ in range(2)] == [VN.VN0, VN.VN1]
    assert [vn_assign_at_source(ip, other, rr, base) for _ in range(2)] == [VN.VN0, VN.VN1]
    # a boundary router alternates only for packets leaving through its own VL
    b = base.index(RouterId(0, 1, 0))
    own = base.vl_at[b]
    far = base.chiplet_vls[0][2]
    assert [vn_assign_at_source(b, other, rr, base, own) for _ in range(2)] == [VN.VN0, VN.VN1]
    assert vn_assign_at_source(b, other, rr, base, far) == VN.VN0


def all_pairs(topo):
    for s in topo.endpoints:
        for d in topo.endpoints:
            if s != d:
                yield s, d


def test_every_route_is_legal_and_minimal(base, tables):
    rr = RoundRobinState(base.num_routers)
    for s, d in all_pairs(base):
        st, hops = walk_route(base, tables, FAULT_FREE, s, d, rr)
        links = len(hops) - 1
        assert links == hop_bound(st, base)
        for h in hops:
            assert legal_move(h.vn_in, h.vn_out, h.in_port, h.out_port)
        vns = [h.vn_out for h in hops]
        assert vns == sorted(vns)  # VN0 then VN1, never back
        if base.layer[s] != base.layer[d]:
            assert [h.out_port for h in hops].count(Port.DOWN) == 1
            assert [h.out_port for h in hops].count(Port.UP) == 1
            assert vns[-1] == VN.VN1  # arriving from the interposer ends in VN1


def test_theorem1_intra_chiplet_both_vns(base, tables):
    s, d = base.index(RouterId(2, 0, 3)), base.index(RouterId(2, 3, 0))
    for bit in (0, 1):
        st, hops = walk_route(base, tables, FAULT_FREE, s, d, ForcedChoices([bit]))
        assert {h.vn_out for h in hops} == {VN(bit)}


def test_theorem2_interposer_carries_both_vns(base, tables):
    s, d = base.index(RouterId(0, 1, 1)), base.index(RouterId(3, 2, 2))
    seen = set()
    for bit in (0, 1):
        _, hops = walk_route(base, tables, FAULT_FREE, s, d, ForcedChoices([bit]))
        seen |= {h.vn_out for h in hops if base.layer[h.router] < 0 and h.out_port in HORIZONTAL}
    assert seen == {VN.VN0, VN.VN1}


def test_theorems3_and_4_any_vl_pair_routes(base, tables):
    """Every source may leave through any VL and enter through any VL."""
    for s, d in all_pairs(base):
        sl, dl = base.layer[s], base.layer[d]
        if sl == dl:
            continue
        for v1, v2 in itertools.product(base.chiplet_vls[sl], base.chiplet_vls[dl]):
            for bits in itertools.product((0, 1), repeat=2):
                _, hops = walk_route(base, tables, FAULT_FREE, s, d, ForcedChoices(bits), first_vl=v1, second_vl=v2)
                assert hops[-1].out_port == Port.LOCAL


def test_literal_boundary_reading_breaks_rule3(base, tables):
    """Round-robin at any boundary source can put a VN1 packet on H->Down."""
    b = base.index(RouterId(0, 1, 0))  # boundary router of VL 0
    far = base.chiplet_vls[0][2]
    dst = base.index(RouterId(3, 0, 0))
    vn = vn_assign_at_source(b, dst, ForcedChoices([1]), base, first_vl=None)
    assert vn == VN.VN1
    st = RouteState(vn=vn, src=b, dst=dst, first_intermediate=far)
    cur, in_port = b, Port.LOCAL
    rr = RoundRobinState(base.num_routers)
    with pytest.raises(RoutingError):
        for _ in range(20):
            out, _ = compute_route(st, cur, in_port, base, tables, FAULT_FREE, rr)
            cur, in_port = base.neighbors[cur][out], out


def test_faulty_first_vl_unroutable(base, tables):
    sc = FaultScenario.of(v.id for v in base.chiplet_vls[0])
    with pytest.raises(UnroutableError):
        new_route(base, tables, sc, 0, base.index(RouterId(1, 0, 0)), RoundRobinState(base.num_routers))
    with pytest.raises(UnroutableError):
        new_route(base, tables, sc, base.index(RouterId(1, 0, 0)), 0, RoundRobinState(base.num_routers))
    # intra-chiplet traffic on a disconnected chiplet still routes
    walk_route(base, tables, sc, 0, 5, RoundRobinState(base.num_routers))


def test_routes_avoid_faulty_vls(base, tables):
    sc = FaultScenario.of([0, 5, 10, 15])
    rr = RoundRobinState(base.num_routers)
    for s, d in all_pairs(base):
        _, hops = walk_route(base, tables, sc, s, d, rr)
        for h in hops:
            if h.out_port in (Port.UP, Port.DOWN):
                assert base.vl_at[h.router].id not in sc.faulty


def test_phase_follows_packet(base, tables):
    s, d = base.index(RouterId(0, 0, 0)), base.index(RouterId(3, 3, 3))
    st = new_route(base, tables, FAULT_FREE, s, d, RoundRobinState(base.num_routers))
    assert st.phase == Phase.SOURCE_CHIPLET
    st2, _ = walk_route(base, tables, FAULT_FREE, s, d, RoundRobinState(base.num_routers))
    assert st2.phase == Phase.DEST_CHIPLET
    assert st2.second_intermediate.chiplet == 3


def test_same_source_destination_rejected(base, tables):
    with pytest.raises(ValueError):
        new_route(base, tables, FAULT_FREE, 3, 3, RoundRobinState(base.num_routers))


def test_interposer_destination(base, tables):
    ip = base.index(RouterId(None, 6, 1))
    st, hops = walk_route(base, tables, FAULT_FREE, 0, ip, RoundRobinState(base.num_routers))
    assert hops[-1].router == ip
    assert len(hops) - 1 == hop_bound(st, base)
