"""Run statistics and their CSV form."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

# Fixed column order of every metrics CSV the package writes.
CSV_COLUMNS = (
    "rate",
    "avg_latency",
    "delivered",
    "vn0_util",
    "vn1_util",
    "injected",
    "throughput",
    "avg_hops",
    "unreachable",
    "saturated",
)


@dataclass
class Metrics:
    """Outcome of one simulation run.

    Latencies and counts cover packets generated inside the measurement
    window.  ``vn0_util``/``vn1_util`` are percentages of the buffer
    occupancy (flit-cycles) accumulated in that window.
    """

    rate: float = 0.0
    injected: int = 0
    delivered: int = 0
    total_latency: int = 0
    total_hops: int = 0
    latency_hist: Counter = field(default_factory=Counter)
    vn_occupancy: List[int] = field(default_factory=lambda: [0, 0])
    vl_traversals: List[int] = field(default_factory=list)
    vl_last_use: List[int] = field(default_factory=list)
    intra_packets: int = 0
    unreachable: int = 0
    purged: int = 0
    saturated: bool = False
    cycles: int = 0
    measure_cycles: int = 0
    endpoints: int = 1
    all_delivered: int = 0

    @property
    def avg_latency(self) -> float:
        return self.total_latency / self.delivered if self.delivered else 0.0

    @property
    def avg_hops(self) -> float:
        return self.total_hops / self.delivered if self.delivered else 0.0

    @property
    def vn0_util(self) -> float:
        tot = sum(self.vn_occupancy)
        return 100.0 * self.vn_occupancy[0] / tot if tot else 0.0

    @property
    def vn1_util(self) -> float:
        tot = sum(self.vn_occupancy)
        return 100.0 * self.vn_occupancy[1] / tot if tot else 0.0

    @property
    def throughput(self) -> float:
        """Delivered measured packets per endpoint per measured cycle."""
        if not self.measure_cycles:
            return 0.0
        return self.delivered / (self.endpoints * self.measure_cycles)

    @property
    def intra_fraction(self) -> float:
        return self.intra_packets / self.injected if self.injected else 0.0

    def row(self) -> Dict[str, str]:
        return {
            "rate": f"{self.rate:.6g}",
            "avg_latency": f"{self.avg_latency:.4f}",
            "delivered": str(self.delivered),
            "vn0_util": f"{self.vn0_util:.4f}",
            "vn1_util": f"{self.vn1_util:.4f}",
            "injected": str(self.injected),
            "throughput": f"{self.throughput:.6f}",
            "avg_hops": f"{self.avg_hops:.4f}",
            "unreachable": str(self.unreachable),
            "saturated": str(int(self.saturated)),
        }


def metrics_csv(rows: Iterable[Metrics], extra: Optional[Sequence[Dict[str, str]]] = None,
                extra_columns: Sequence[str] = ()) -> str:
    """CSV text with ``extra_columns`` prepended to the fixed columns."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(extra_columns) + list(CSV_COLUMNS))
    rows = list(rows)
    extra = extra or [{} for _ in rows]
    for m, ex in zip(rows, extra):
        r = m.row()
        w.writerow([ex[c] for c in extra_columns] + [r[c] for c in CSV_COLUMNS])
    return buf.getvalue()
