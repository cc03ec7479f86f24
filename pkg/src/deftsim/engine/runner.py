"""Single runs and injection-rate sweeps."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import List, Optional, Sequence

from ..topology import Topology
from ..vlselect import FaultScenario, SelectionTable
from .metrics import Metrics
from .simulator import SimConfig, Simulator
from .traffic import TrafficSpec

JOBS_ENV = "DEFTSIM_JOBS"


def default_jobs() -> int:
    """Worker processes for sweeps, from ``DEFTSIM_JOBS`` (default 1)."""
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{JOBS_ENV} must be an integer, got {raw!r}") from None


def run(topo: Topology, tables: SelectionTable, scenario: FaultScenario = FaultScenario(),
        traffic: Optional[TrafficSpec] = None, config: Optional[SimConfig] = None,
        faults: Sequence = ()) -> Metrics:
    """Simulate one traffic spec to completion.

    ``faults`` is a sequence of ``(at_cycle, FaultScenario)`` switched in
    during the run.
    """
    sim = Simulator(topo, tables, scenario, traffic, config)
    for at, sc in faults:
        sim.inject_fault(sc, at)
    return sim.run()


def _run_cell(args) -> Metrics:
    return run(*args)


def run_many(cells: Sequence[tuple], jobs: Optional[int] = None) -> List[Metrics]:
    """Run independent ``run`` argument tuples, in parallel when ``jobs > 1``.

    Results come back in input order whatever the worker count.
    """
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(cells) <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as ex:
        return list(ex.map(_run_cell, cells))


def latency_sweep(topo: Topology, tables: SelectionTable, scenario: FaultScenario,
                  rates: Sequence[float], traffic: Optional[TrafficSpec] = None,
                  config: Optional[SimConfig] = None, jobs: Optional[int] = None,
                  stop_at_saturation: bool = False) -> List[Metrics]:
    """One :class:`Metrics` per injection rate, in the order given.

    ``traffic`` provides everything but the rate.  With
    ``stop_at_saturation`` the rates above the first saturated one are
    skipped (runs go sequentially in that mode).
    """
    base = traffic or TrafficSpec()
    cells = [(topo, tables, scenario, replace(base, rate=r), config) for r in rates]
    if not stop_at_saturation:
        return run_many(cells, jobs)
    out = []
    for c in cells:
        m = _run_cell(c)
        out.append(m)
        if m.saturated:
            break
    return out


def saturated_from(curve: Sequence[Metrics]) -> Optional[float]:
    """Lowest rate flagged saturated, or None."""
    for m in curve:
        if m.saturated:
            return m.rate
    return None
