"""Deadlock-free, fault-tolerant routing for 2.5D chiplet networks.

Static tooling (topology, VL selection, routing, channel-dependency
verification) and a cycle-accurate wormhole simulator.
"""

from .topology import Port, RouterId, Topology, TopologyError, preset, read_topology
from .vlselect import (
    FAULT_FREE,
    FaultScenario,
    SelectionTable,
    TrafficProfile,
    build_tables,
    optimize_selection,
)
from .routing import VN, RoundRobinState, compute_route, new_route, walk_route
from .verify import build_cdg, find_cycle, reachability, sweep_scenarios

__version__ = "0.1.0"

__all__ = [
    "Port", "RouterId", "Topology", "TopologyError", "preset", "read_topology",
    "FAULT_FREE", "FaultScenario", "SelectionTable", "TrafficProfile", "build_tables",
    "optimize_selection", "VN", "RoundRobinState", "compute_route", "new_route", "walk_route",
    "build_cdg", "find_cycle", "reachability", "sweep_scenarios",
]
