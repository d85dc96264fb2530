from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class CallRecord:
    size: int
    status: str
    wall_time: float
    tag: str = ""


def nearest_rank(sorted_times, q: float = 0.99) -> float:
    if not sorted_times:
        return 0.0
    rank = max(1, math.ceil(q * len(sorted_times)))
    return sorted_times[rank - 1]


@dataclass
class SolverStats:
    """Append-only log of solver calls with running aggregates."""

    records: list[CallRecord] = field(default_factory=list)
    total_time: float = 0.0
    _sorted: list[float] = field(default_factory=list, repr=False)

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def mean(self) -> float:
        return self.total_time / len(self.records) if self.records else 0.0

    @property
    def p99(self) -> float:
        return nearest_rank(self._sorted)

    def add(self, record: CallRecord) -> "SolverStats":
        self.records.append(record)
        self.total_time += record.wall_time
        bisect.insort(self._sorted, record.wall_time)
        return self

    def merge(self, other: "SolverStats") -> "SolverStats":
        for r in other.records:
            self.add(r)
        return self

    def recomputed(self) -> tuple[int, float, float]:
        """(count, mean, p99) from the raw records, ignoring running state."""
        times = sorted(r.wall_time for r in self.records)
        mean = sum(times) / len(times) if times else 0.0
        return len(times), mean, nearest_rank(times)


def record_call(stats: SolverStats, record: CallRecord) -> SolverStats:
    return stats.add(record)
