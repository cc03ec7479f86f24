"""
Latency under faults
====================

Short cycle-accurate runs comparing three ways of filling the VL tables:
the optimizer, nearest-VL and random.  The run lengths here are tiny so the
script finishes in a few minutes; use ``deftsim sweep`` for full curves.
"""

import numpy as np

from deftsim import build_tables, preset
from deftsim.engine import TrafficSpec, latency_sweep
from deftsim.experiments import analytic_zero_load, fig7_scenario

topo = preset("baseline4")
rates = [0.005, 0.01, 0.015]
spec = TrafficSpec(warmup=500, measure=4_000, drain_cap=20_000, seed=3)

###############################################################################
# Zero-load check
# ---------------
# At a trickle the measured latency should sit on the analytic figure,
# a fixed pipeline cost plus two cycles per hop.

tables = {s: build_tables(topo, strategy=s, seed=1) for s in ("optimal", "distance", "random")}
low = latency_sweep(topo, tables["optimal"], fig7_scenario(topo, "fig7a"), [0.002],
                    TrafficSpec(warmup=500, measure=8_000, seed=3))[0]
print(f"rate 0.002: measured {low.avg_latency:.2f}, "
      f"zero-load {analytic_zero_load(topo, tables['optimal'], fig7_scenario(topo, 'fig7a')):.2f}")

###############################################################################
# Four and eight faulty VLs
# -------------------------

for name in ("fig7a", "fig7b"):
    sc = fig7_scenario(topo, name)
    print(f"\n{len(sc.faulty)} faulty VLs")
    print("strategy  " + "".join(f"{r:>9}" for r in rates))
    for strat, tab in tables.items():
        lat = np.array([m.avg_latency for m in latency_sweep(topo, tab, sc, rates, spec)])
        print(f"{strat:<10}" + "".join(f"{x:9.2f}" for x in lat))
