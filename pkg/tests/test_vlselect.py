import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deftsim.topology import ChipletSpec, Topology, grid_system
from deftsim.vlselect import (
    FAULT_FREE,
    FaultScenario,
    SelectionError,
    SelectionSet,
    SelectionTable,
    TrafficProfile,
    baseline_select,
    build_tables,
    distance_cost,
    enumerate_scenarios,
    load_cost,
    optimize_selection,
    overall_cost,
    vl_load,
)

from oracle import brute_force, distances, exact_cost, scaled_cost

CORNERS = [(0, 0), (2, 0), (0, 2), (2, 2)]


def single_chiplet(w, h, positions):
    return Topology([ChipletSpec(w, h, 0, 0)], (w, h), [(0, x, y) for x, y in positions])


# -- cost model --------------------------------------------------------------

def test_cost_spot_values():
    topo = single_chiplet(2, 1, [(0, 0), (1, 0)])
    s = SelectionSet(0, (0, 1), (0, 0))
    rates = [1.0, 3.0]
    assert vl_load(s, 0, rates) == 4.0 and vl_load(s, 1, rates) == 0.0
    # l_avg = 2, both VLs deviate by 100%
    assert load_cost(s, 0, rates) == 1.0 and load_cost(s, 1, rates) == 1.0
    assert distance_cost(s, 0, topo) == 1
    cb = overall_cost(s, rates, topo, rho=0.5)
    assert cb.C_s == pytest.approx(2.5)


def test_zero_traffic_load_cost_is_zero():
    topo = single_chiplet(2, 1, [(0, 0), (1, 0)])
    s = SelectionSet(0, (0, 1), (1, 1))
    assert load_cost(s, 0, [0.0, 0.0]) == 0.0
    assert overall_cost(s, [0.0, 0.0], topo).C_s == pytest.approx(0.01)


def test_fourteen_degraded_scenarios(base):
    scs = enumerate_scenarios(base, 0)
    assert scs[0] == FAULT_FREE
    assert len(scs) - 1 == 14
    assert len(set(scs)) == 15
    assert all(sc.chiplet_connected(base, 0) for sc in scs)


def test_fig3a_fault_free_distance_is_balanced(base):
    s = baseline_select("distance", FAULT_FREE, 0, base)
    assert sorted(s.counts().values()) == [4, 4, 4, 4]


def test_fig3b_one_fault_distance_eight_four_four():
    topo = single_chiplet(4, 4, CORNERS)
    sc = FaultScenario.of([3])
    s = baseline_select("distance", sc, 0, topo)
    assert sorted(s.counts().values()) == [4, 4, 8]
    opt, cb = optimize_selection(topo, 0, sc, [1.0] * 16)
    assert sorted(opt.counts().values()) == [5, 5, 6]
    assert cb.C_s < overall_cost(s, [1.0] * 16, topo).C_s


def test_fig3c_distance_loads_exact(base):
    s = baseline_select("distance", FAULT_FREE, 0, base)
    rates = [0.0] * 16
    groups = {v: [k for k, c in enumerate(s.choice) if c == v] for v in range(4)}
    for k in groups[0]:
        rates[k] = 0.125
    rates[groups[2][0]] = 0.3
    rates[groups[3][0]] = 0.2
    loads = [vl_load(s, v, rates) for v in range(4)]
    assert loads == [0.5, 0.0, 0.3, 0.2]
    exact = [sum(Fraction(rates[k]) for k in groups[v]) for v in range(4)]
    assert exact[0] == Fraction(1, 2) and exact[1] == 0


def test_optimal_baseline_costs(base):
    r = [1.0] * 16
    s, cb = optimize_selection(base, 0, FAULT_FREE, r)
    assert sorted(s.counts().values()) == [4, 4, 4, 4]
    assert cb.C_s == pytest.approx(0.12)
    s, cb = optimize_selection(base, 0, FaultScenario.of([0]), r)
    assert sorted(s.counts().values()) == [5, 5, 6]
    s, _ = optimize_selection(base, 0, FaultScenario.of([0, 1, 2]), r)
    assert s.counts() == {3: 16}


# -- optimizer against the oracle --------------------------------------------

def check_against_oracle(topo, sc, rates):
    dist = distances(topo, 0)
    avail = [v.local_id for v in sc.available(topo, 0)]
    best, best_choice = brute_force([int(t) for t in rates], dist, avail)
    for search in ("exhaustive", "bnb"):
        s, cb = optimize_selection(topo, 0, sc, [float(t) for t in rates], strategy=search)
        got = scaled_cost(s.choice, [int(t) for t in rates], dist, avail, 1, 100)
        assert got == best, search
        assert s.choice == best_choice, search
        assert exact_cost(s.choice, rates, dist, avail, Fraction(1, 100)) == \
            exact_cost(best_choice, rates, dist, avail, Fraction(1, 100))


def test_oracle_two_by_two():
    topo = single_chiplet(2, 2, [(0, 0), (1, 1)])
    check_against_oracle(topo, FAULT_FREE, [1, 2, 3, 4])
    check_against_oracle(topo, FAULT_FREE, [0, 0, 0, 0])


def test_oracle_three_by_three_four_vls():
    topo = single_chiplet(3, 3, [(1, 0), (2, 1), (1, 2), (0, 1)])
    check_against_oracle(topo, FAULT_FREE, [1] * 9)
    check_against_oracle(topo, FAULT_FREE, [3, 0, 1, 2, 5, 1, 0, 0, 4])


@settings(max_examples=40, deadline=None)
@given(
    w=st.integers(1, 3), h=st.integers(1, 2),
    data=st.data(),
)
def test_oracle_random_instances(w, h, data):
    cells = [(x, y) for y in range(h) for x in range(w)]
    positions = data.draw(st.lists(st.sampled_from(cells), min_size=1, max_size=min(4, len(cells)), unique=True))
    topo = single_chiplet(w, h, positions)
    faulty = data.draw(st.sets(st.sampled_from(range(len(positions))), max_size=len(positions) - 1))
    rates = data.draw(st.lists(st.integers(0, 6), min_size=w * h, max_size=w * h))
    check_against_oracle(topo, FaultScenario.of(faulty), rates)


def test_bnb_matches_exhaustive_on_baseline_scenarios(base):
    for sc in enumerate_scenarios(base, 0):
        if len(sc.faulty) < 2:
            continue  # spaces above 10^6 are covered by bnb alone
        a, ca = optimize_selection(base, 0, sc, [1.0] * 16, strategy="exhaustive")
        b, cb = optimize_selection(base, 0, sc, [1.0] * 16, strategy="bnb")
        assert a.choice == b.choice and ca.C_s == cb.C_s


def test_optimal_never_worse_than_restricted(base):
    rates = [1.0] * 16
    for sc in enumerate_scenarios(base, 1):
        s, cb = optimize_selection(base, 1, sc, rates)
        for other in (baseline_select("distance", sc, 1, base), baseline_select("random", sc, 1, base, 3),
                      optimize_selection(base, 1, sc, rates, k_nearest=1)[0]):
            assert cb.C_s <= overall_cost(other, rates, base).C_s + 1e-12


def test_unknown_search_rejected(base):
    with pytest.raises(SelectionError):
        optimize_selection(base, 0, FAULT_FREE, [1.0] * 16, strategy="greedy")


# -- tables ----------------------------------------------------------------

def test_tables_cover_every_scenario(base, tables):
    assert len(tables) == 4 * 15 * 2
    for c in range(4):
        for sc in enumerate_scenarios(base, c):
            for role in ("source", "dest"):
                s = tables.lookup(base, c, sc, role)
                assert all(x not in sc.local(base, c) for x in s.choice)


def test_tables_text_round_trip(base, tables, tmp_path):
    text = tables.to_text()
    json.loads(text)
    again = SelectionTable.from_text(text, base)
    assert again.entries == tables.entries
    assert again.to_text() == text
    p = tmp_path / "tables.txt"
    tables.save(p)
    assert SelectionTable.load(p, base).entries == tables.entries


def test_tables_reject_faulty_choice(base, tables):
    doc = json.loads(tables.to_text())
    row = next(r for r in doc["entries"] if r["scenario"] == [0])
    row["choices"][0] = 0
    with pytest.raises(SelectionError):
        SelectionTable.from_text(json.dumps(doc), base)


def test_select_returns_none_when_disconnected(base, tables):
    sc = FaultScenario.of(v.id for v in base.chiplet_vls[2])
    r = base.chiplet_routers(2)[0]
    assert tables.select(base, r, sc, "source") is None


def test_random_tables_deterministic(base):
    a = build_tables(base, strategy="random", seed=4)
    b = build_tables(base, strategy="random", seed=4)
    c = build_tables(base, strategy="random", seed=5)
    assert a.to_text() == b.to_text()
    assert a.entries != c.entries


def test_traffic_profile_round_trip(base):
    p = TrafficProfile({0: 0.5, 3: 1.25}, {1: 2.0})
    q = TrafficProfile.from_json(p.to_json())
    assert q.rates(base, 0, "source")[:4] == [0.5, 0.0, 0.0, 1.25]
    assert q.rates(base, 0, "dest")[:2] == [0.0, 2.0]


def test_negative_rate_rejected(base):
    with pytest.raises(SelectionError):
        TrafficProfile({0: -1.0}).rates(base, 0)


def test_profile_shifts_selection(base):
    # heavy senders pull the optimizer away from the plain distance choice
    hot = {i: (9.0 if base.local_index(i) in (0, 1, 4, 5) else 1.0) for i in range(base.num_chiplet_routers)}
    t = build_tables(base, TrafficProfile(hot))
    s = t.lookup(base, 0, FAULT_FREE, "source")
    loads = [vl_load(s, v, TrafficProfile(hot).rates(base, 0)) for v in range(4)]
    assert max(loads) - min(loads) <= 9.0


def test_identical_chiplets_share_results():
    topo = grid_system(2, 1)
    t = build_tables(topo)
    for sc in enumerate_scenarios(topo, 0):
        local = sc.local(topo, 0)
        assert t.entries[(0, local, "source")].choice == t.entries[(1, local, "source")].choice
