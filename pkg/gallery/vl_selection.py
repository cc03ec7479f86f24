"""
Choosing vertical links under faults
====================================

Every router of a chiplet sends its inter-chiplet packets down one vertical
link (VL).  When a VL breaks, the routers that used it must move somewhere
else.  Picking the nearest surviving VL is cheap but piles traffic onto one
link; the optimizer trades a few extra hops for a flatter load.
"""

import numpy as np

from deftsim import FaultScenario, preset
from deftsim.vlselect import baseline_select, optimize_selection, overall_cost

topo = preset("baseline4")
rates = [1.0] * 16          # uniform, the pessimistic offline assumption


def show(title, s):
    grid = np.array([c if c is not None else -1 for c in s.choice]).reshape(4, 4)
    print(title)
    for row in grid[::-1]:          # north at the top
        print("   " + " ".join("x" if c < 0 else "ABCD"[c] for c in row))


###############################################################################
# Fault-free chiplet
# ------------------
# With all four VLs alive the nearest-VL rule already balances the load.

s = baseline_select("distance", FaultScenario(), 0, topo)
show("nearest VL, no faults", s)
print("routers per VL:", s.counts())

###############################################################################
# One broken VL
# -------------
# Kill VL ``A``.  Its four routers fall back onto their next-nearest link.

sc = FaultScenario.of([topo.vl_id(0, 0)])
near = baseline_select("distance", sc, 0, topo)
opt, cost = optimize_selection(topo, 0, sc, rates)
show("nearest VL, A faulty", near)
show("optimized, A faulty", opt)

for name, sel in (("nearest", near), ("optimized", opt)):
    cb = overall_cost(sel, rates, topo)
    loads = np.array([cb.l_v[v] for v in sel.available])
    print(f"{name:>9}: loads {loads.astype(int)}  spread {np.ptp(loads):.0f}  "
          f"hops {sum(cb.D_v.values())}  cost {cb.C_s:.3f}")

###############################################################################
# The distance weight
# -------------------
# ``rho`` scales the hop term against the load term.  Large values
# reproduce the nearest-VL answer; zero ignores distance altogether.

for rho in (0.0, 0.01, 0.1, 1.0):
    s, cb = optimize_selection(topo, 0, sc, rates, rho=rho)
    print(f"rho={rho:<5} counts={s.counts()} hops={sum(cb.D_v.values())}")
