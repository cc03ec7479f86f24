"""
Reachability as VLs fail
========================

Faults are sampled exhaustively: every mask of k broken VLs that leaves each
chiplet at least one working link.  For each mask the fraction of ordered
source/destination pairs with a legal route is computed.
"""

from deftsim import FaultScenario, build_tables, preset
from deftsim.verify import count_reachable, sweep_scenarios

topo = preset("baseline4")
tables = build_tables(topo)

print(f"{'faults':>6} {'rate':>7} {'masks':>6} {'avg':>6} {'worst':>6}")
for r in sweep_scenarios(topo, tables, 5):
    print(f"{r.faults:>6} {r.fault_rate:>7.2%} {r.masks:>6} {r.avg:>6.3f} {r.worst:>6.3f}")

###############################################################################
# Cutting a chiplet off
# ---------------------
# Once a chiplet loses all of its VLs, its routers can still talk to each
# other but to nobody else.  Each of its N routers loses E - N destinations
# and is lost as a destination by the other E - N endpoints.

e, n = len(topo.endpoints), topo.chiplets[0].num_routers
cut = FaultScenario.of(v.id for v in topo.chiplet_vls[1])
measured = count_reachable(topo, tables, cut).ratio
formula = 1 - 2 * n * (e - n) / (e * (e - 1))
print(f"\nchiplet 1 cut: measured {measured:.6f}, closed form {formula:.6f}")
