"""Cycle-accurate simulation of DeFT-routed chiplet systems."""

from .metrics import CSV_COLUMNS, Metrics, metrics_csv
from .simulator import (
    DeadlockSuspected,
    EngineError,
    FaultInjectionError,
    Packet,
    SimConfig,
    Simulator,
    zero_load_latency,
)
from .traffic import (
    PATTERNS,
    SyntheticSource,
    TraceFormatError,
    TrafficSpec,
    default_hotspots,
    replay_trace,
    write_trace,
)
from .runner import latency_sweep, run

__all__ = [
    "CSV_COLUMNS", "Metrics", "metrics_csv", "DeadlockSuspected", "EngineError",
    "FaultInjectionError", "Packet", "SimConfig", "Simulator", "zero_load_latency",
    "PATTERNS", "SyntheticSource", "TraceFormatError", "TrafficSpec", "default_hotspots",
    "replay_trace", "write_trace", "latency_sweep", "run",
]
