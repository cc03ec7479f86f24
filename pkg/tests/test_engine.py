import random

import pytest

from deftsim.engine import (
    CSV_COLUMNS,
    DeadlockSuspected,
    FaultInjectionError,
    SimConfig,
    Simulator,
    TraceFormatError,
    TrafficSpec,
    default_hotspots,
    latency_sweep,
    metrics_csv,
    replay_trace,
    run,
    write_trace,
    zero_load_latency,
)
from deftsim.engine.traffic import SyntheticSource
from deftsim.experiments import analytic_zero_load
from deftsim.routing import RoundRobinState, hop_bound, walk_route
from deftsim.topology import ChipletSpec, RouterId, Topology
from deftsim.vlselect import FAULT_FREE, FaultScenario, build_tables

CHECKED = SimConfig(check_every=1)


def trace_spec(tmp_path, packets, name="t.txt"):
    p = tmp_path / name
    write_trace(p, packets)
    return TrafficSpec(kind="trace", trace=p)


def route_hops(topo, tables, s, d, scenario=FAULT_FREE):
    st, _ = walk_route(topo, tables, scenario, s, d, RoundRobinState(topo.num_routers))
    return hop_bound(st, topo)


@pytest.mark.parametrize("src, dst", [
    (RouterId(0, 0, 0), RouterId(0, 3, 3)),
    (RouterId(0, 1, 1), RouterId(3, 2, 2)),
    (RouterId(1, 1, 0), RouterId(1, 0, 0)),
    (RouterId(2, 3, 3), RouterId(1, 0, 0)),
    (RouterId(3, 0, 3), RouterId(0, 3, 0)),
])
def test_single_packet_zero_load(base, tables, tmp_path, src, dst):
    s, d = base.index(src), base.index(dst)
    m = Simulator(base, tables, traffic=trace_spec(tmp_path, [(3, s, d)]), config=CHECKED).run()
    assert m.delivered == 1
    assert m.avg_latency == zero_load_latency(route_hops(base, tables, s, d))


def test_zero_load_formula():
    assert zero_load_latency(0) == 9
    assert zero_load_latency(8) == 25
    assert zero_load_latency(3, packet_flits=1) == 8


def test_zero_rate_only_advances_clock(base, tables):
    sim = Simulator(base, tables, traffic=TrafficSpec(rate=0.0))
    credits = list(sim.credits)
    for _ in range(50):
        sim.step()
    assert sim.cycle == 50
    assert sim.credits == credits
    assert sim.idle and sim.flits_injected == 0
    assert sim.metrics.injected == 0


def test_contention_stalls_without_loss(base, tables, tmp_path):
    a, b = base.index(RouterId(0, 0, 0)), base.index(RouterId(0, 1, 0))
    d = base.index(RouterId(0, 3, 0))
    sim = Simulator(base, tables, traffic=trace_spec(tmp_path, [(0, a, d), (0, b, d)]),
                    config=CHECKED, record_paths=True)
    m = sim.run()
    assert m.delivered == 2
    assert sim.flits_injected == sim.flits_ejected == 16
    lats = sorted(p.eject - p.gen for p in sim.delivered_packets)
    free = sorted(zero_load_latency(route_hops(base, tables, s, d)) for s in (a, b))
    assert lats != free and all(x >= y for x, y in zip(lats, free))


def test_empty_trace(base, tables, tmp_path):
    m = Simulator(base, tables, traffic=trace_spec(tmp_path, [])).run()
    assert m.injected == m.delivered == 0
    assert m.avg_latency == 0.0


def test_two_line_trace(base, tables, tmp_path):
    m = Simulator(base, tables, traffic=trace_spec(tmp_path, [(5, 0, 9), (7, 3, 2)]), config=CHECKED).run()
    assert m.injected == m.delivered == 2


def test_trace_validation(base, tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# header\n1,0,5\n2,4,4\n")
    with pytest.raises(TraceFormatError, match="line 3"):
        replay_trace(p)
    p.write_text("1,0,5\n\n2,0,x\n")
    with pytest.raises(TraceFormatError, match="line 3"):
        replay_trace(p)
    p.write_text("1,0\n")
    with pytest.raises(TraceFormatError, match="line 1"):
        replay_trace(p)
    p.write_text("5,0,1\n4,0,2\n")
    with pytest.raises(TraceFormatError, match="out of order"):
        replay_trace(p)
    p.write_text("1,0,500\n")
    with pytest.raises(TraceFormatError, match="not an endpoint"):
        replay_trace(p, base)
    p.write_text("# c,s,d\n 3 , 1 , 2 \n")
    assert replay_trace(p, base) == [(3, 1, 2)]


def test_trace_preserves_order_per_source(base, tables, tmp_path):
    pk = [(0, 0, 40), (0, 0, 41), (1, 0, 5), (1, 0, 63)]
    sim = Simulator(base, tables, traffic=trace_spec(tmp_path, pk), record_paths=True)
    sim.run()
    by_id = sorted(sim.delivered_packets, key=lambda p: p.id)
    assert [p.dst for p in by_id] == [40, 41, 5, 63]
    assert [p.inject for p in by_id] == sorted(p.inject for p in by_id)


@pytest.mark.parametrize("kind", ["uniform", "localized", "hotspot"])
def test_invariants_under_load(base, tables, kind):
    spec = TrafficSpec(kind=kind, rate=0.03, warmup=100, measure=600, drain_cap=20_000)
    sim = Simulator(base, tables, traffic=spec, config=SimConfig(check_every=1), record_paths=True)
    m = sim.run()
    assert sim.idle and not m.saturated
    assert sim.flits_injected == sim.flits_ejected == 8 * m.all_delivered
    for p in sim.delivered_packets:
        assert p.hops == hop_bound(p.route, base)
        assert p.vn_path == sorted(p.vn_path)
    assert m.vn0_util + m.vn1_util == pytest.approx(100.0)


def test_two_vcs_per_vn(base, tables):
    spec = TrafficSpec(rate=0.03, warmup=100, measure=500)
    m = Simulator(base, tables, traffic=spec, config=SimConfig(vcs_per_vn=2, check_every=5)).run()
    assert m.delivered == m.injected > 0


def test_single_flit_packets(base, tables):
    spec = TrafficSpec(rate=0.05, warmup=100, measure=300)
    m = Simulator(base, tables, traffic=spec, config=SimConfig(packet_flits=1, check_every=1)).run()
    assert m.delivered == m.injected > 0


def test_determinism(base, tables):
    spec = TrafficSpec(kind="hotspot", rate=0.02, seed=9, warmup=200, measure=1500)
    a, b = run(base, tables, FAULT_FREE, spec), run(base, tables, FAULT_FREE, spec)
    assert a.row() == b.row()
    assert a.latency_hist == b.latency_hist
    assert a.vl_traversals == b.vl_traversals
    c = run(base, tables, FAULT_FREE, TrafficSpec(kind="hotspot", rate=0.02, seed=10, warmup=200, measure=1500))
    assert c.row() != a.row()


def test_low_rate_latency_near_zero_load(base, tables):
    m = run(base, tables, FAULT_FREE, TrafficSpec(rate=0.002, warmup=500, measure=15_000))
    zl = analytic_zero_load(base, tables, FAULT_FREE)
    assert zl == 25.0
    assert abs(m.avg_latency - zl) / zl < 0.05


def test_localized_intra_fraction(base, tables):
    m = run(base, tables, FAULT_FREE, TrafficSpec(kind="localized", rate=0.02, warmup=200, measure=6000))
    assert m.injected > 5000
    assert abs(m.intra_fraction - 0.40) <= 0.02


def test_hotspot_destinations(base):
    hs = default_hotspots(base)
    assert len(hs) == 3 and len(set(hs)) == 3
    src = SyntheticSource(base, TrafficSpec(kind="hotspot", rate=0.5, seed=3))
    dests = [src.destination(0) for _ in range(20000)]
    for h in hs:
        assert abs(dests.count(h) / len(dests) - (0.10 + 0.7 / 63)) < 0.01


def test_traffic_spec_validation(base):
    with pytest.raises(ValueError):
        TrafficSpec(rate=1.5)
    with pytest.raises(ValueError):
        TrafficSpec(kind="tornado")
    with pytest.raises(ValueError):
        TrafficSpec(kind="hotspot", hotspots=list(range(11)))
    with pytest.raises(ValueError):
        SyntheticSource(base, TrafficSpec(kind="hotspot", hotspots=[100]))


def test_static_fault_equivalence(base, tables):
    sc = FaultScenario.of([1, 6])
    spec = TrafficSpec(rate=0.02, warmup=200, measure=1500)
    a = run(base, tables, sc, spec)
    b = run(base, tables, FAULT_FREE, spec, faults=[(0, sc)])
    assert a.row() == b.row() and a.vl_traversals == b.vl_traversals


def chiplet_pair_trace(base, n=300, seed=2):
    rng = random.Random(seed)
    c0, c1 = list(base.chiplet_routers(0)), list(base.chiplet_routers(1))
    pk = []
    for t in sorted(rng.randrange(3000) for _ in range(n)):
        s, d = (rng.choice(c0), rng.choice(c1)) if rng.random() < 0.5 else (rng.choice(c1), rng.choice(c0))
        pk.append((t, s, d))
    return pk


def test_unused_vl_fault_changes_nothing(base, tables, tmp_path):
    spec = trace_spec(tmp_path, chiplet_pair_trace(base))
    a = run(base, tables, FAULT_FREE, spec)
    unused = base.chiplet_vls[3][0].id
    assert a.vl_traversals[unused] == 0
    b = run(base, tables, FAULT_FREE, spec, faults=[(1500, FaultScenario.of([unused]))])
    assert a.row() == b.row() and a.latency_hist == b.latency_hist


def test_used_vl_fault_is_avoided_afterwards(base, tables, tmp_path):
    spec = trace_spec(tmp_path, chiplet_pair_trace(base, 600))
    vl = base.chiplet_vls[0][1].id
    sim = Simulator(base, tables, traffic=spec, config=SimConfig(check_every=7))
    sim.inject_fault(FaultScenario.of([vl]), 1500)
    m = sim.run()
    assert m.vl_traversals[vl] > 0
    assert m.vl_last_use[vl] < 1500
    assert m.delivered + m.unreachable == m.injected == 600
    sim.check_invariants()


def test_disconnecting_fault_refused(base, tables):
    cut = FaultScenario.of(v.id for v in base.chiplet_vls[1])
    with pytest.raises(FaultInjectionError):
        Simulator(base, tables, cut)
    sim = Simulator(base, tables)
    with pytest.raises(FaultInjectionError):
        sim.inject_fault(cut, 10)
    m = run(base, tables, cut, TrafficSpec(rate=0.01, warmup=0, measure=2000),
            SimConfig(allow_disconnect=True, check_every=50))
    assert m.unreachable > 0
    assert m.delivered + m.unreachable == m.injected


def test_saturation_flag(base, tables):
    m = run(base, tables, FAULT_FREE, TrafficSpec(rate=0.2, warmup=100, measure=2000, drain_cap=3000))
    assert m.saturated


def test_watchdog_reports_stall(base, tables, tmp_path):
    s, d = base.index(RouterId(0, 0, 0)), base.index(RouterId(0, 3, 0))
    sim = Simulator(base, tables, traffic=trace_spec(tmp_path, [(0, s, d)]),
                    config=SimConfig(watchdog=50, watchdog_every=10))
    # cut the credits of the first link the packet needs
    for vc in range(sim.nvc):
        sim.credits[(s * 7 + 0) * sim.nvc + vc] = 0
    with pytest.raises(DeadlockSuspected, match="stalled"):
        sim.run()


def test_latency_sweep_monotone(base, tables):
    curve = latency_sweep(base, tables, FAULT_FREE, [0.002, 0.01, 0.02],
                          TrafficSpec(warmup=300, measure=3000))
    lats = [m.avg_latency for m in curve]
    assert all(b >= a * 0.98 for a, b in zip(lats, lats[1:]))
    assert [m.rate for m in curve] == [0.002, 0.01, 0.02]


def test_metrics_csv_columns(base, tables):
    m = run(base, tables, FAULT_FREE, TrafficSpec(rate=0.01, warmup=100, measure=300))
    text = metrics_csv([m, m], [{"k": "a"}, {"k": "b"}], ("k",))
    lines = text.splitlines()
    assert lines[0] == "k," + ",".join(CSV_COLUMNS)
    assert CSV_COLUMNS[:5] == ("rate", "avg_latency", "delivered", "vn0_util", "vn1_util")
    assert len(lines) == 3


def test_interposer_sources_inject(tmp_path):
    topo = Topology([ChipletSpec(2, 2, 0, 0), ChipletSpec(2, 2, 2, 0)], (4, 2),
                    [(0, 1, 1), (1, 0, 0), (1, 1, 0)], interposer_sources=[(0, 0), (3, 1)])
    tab = build_tables(topo)
    m = run(topo, tab, FAULT_FREE, TrafficSpec(rate=0.05, warmup=100, measure=2000), SimConfig(check_every=3))
    assert m.delivered == m.injected > 0
    assert m.vn0_util > 0 and m.vn1_util > 0
