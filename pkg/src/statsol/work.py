"""Work accounting in cell updates (cells x RK stages x steps)."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class WorkLedger:
    cell_updates: int = 0
    samples_by_level: dict[int, int] = field(default_factory=dict)
    updates_by_level: dict[int, int] = field(default_factory=dict)
    d: int = 1

    def record(self, level: int, samples: int, updates: int):
        self.cell_updates += int(updates)
        self.samples_by_level[level] = self.samples_by_level.get(level, 0) + int(samples)
        self.updates_by_level[level] = self.updates_by_level.get(level, 0) + int(updates)

    def merge(self, other: "WorkLedger") -> "WorkLedger":
        out = WorkLedger(self.cell_updates, dict(self.samples_by_level), dict(self.updates_by_level), self.d)
        for lvl in other.samples_by_level:
            out.record(lvl, other.samples_by_level[lvl], other.updates_by_level.get(lvl, 0))
        return out

    def to_dict(self) -> dict:
        return {
            "cell_updates": self.cell_updates,
            "samples_by_level": {str(k): v for k, v in sorted(self.samples_by_level.items())},
            "updates_by_level": {str(k): v for k, v in sorted(self.updates_by_level.items())},
            "d": self.d,
        }
