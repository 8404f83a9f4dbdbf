"""Per-iteration benchmark records and their CSV serialization."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ClockError

CSV_COLUMNS = ("outer_k", "inner_total", "cg_total", "wall_seconds", "objective", "kkt", "grad_norm", "gap")


def _fmt(value: float) -> str:
    return format(value, ".17g")


@dataclass(frozen=True)
class TrajectoryRecord:
    outer_k: int
    inner_total: int
    cg_total: int
    wall_seconds: float
    objective: float
    kkt: float
    grad_norm: float
    gap: float | None = None


@dataclass
class Trajectory:
    """Ordered solve records; wall time and outer index never regress."""

    records: list[TrajectoryRecord] = field(default_factory=list)

    def record(self, snapshot: TrajectoryRecord) -> None:
        """Append a snapshot, enforcing monotone time and finite metrics."""
        if self.records:
            last = self.records[-1]
            if snapshot.wall_seconds < last.wall_seconds:
                raise ClockError(
                    f"wall time went backwards: {snapshot.wall_seconds!r} < {last.wall_seconds!r}"
                )
            if snapshot.outer_k < last.outer_k:
                raise ValueError("outer iteration index went backwards")
        for name in ("wall_seconds", "objective", "kkt", "grad_norm"):
            if not np.isfinite(getattr(snapshot, name)):
                raise ValueError(f"non-finite {name} in trajectory record")
        if snapshot.gap is not None and not np.isfinite(snapshot.gap):
            raise ValueError("non-finite gap in trajectory record")
        self.records.append(snapshot)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            row = [
                str(r.outer_k),
                str(r.inner_total),
                str(r.cg_total),
                _fmt(r.wall_seconds),
                _fmt(r.objective),
                _fmt(r.kkt),
                _fmt(r.grad_norm),
                "" if r.gap is None else _fmt(r.gap),
            ]
            out.write(",".join(row) + "\n")
        return out.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            handle.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        lines = [line for line in text.splitlines() if line]
        if not lines or lines[0] != ",".join(CSV_COLUMNS):
            raise ValueError("missing or malformed trajectory header")
        traj = cls()
        for line in lines[1:]:
            parts = line.split(",")
            traj.record(
                TrajectoryRecord(
                    outer_k=int(parts[0]),
                    inner_total=int(parts[1]),
                    cg_total=int(parts[2]),
                    wall_seconds=float(parts[3]),
                    objective=float(parts[4]),
                    kkt=float(parts[5]),
                    grad_norm=float(parts[6]),
                    gap=None if parts[7] == "" else float(parts[7]),
                )
            )
        return traj

    @classmethod
    def read_csv(cls, path) -> "Trajectory":
        with open(path, "r", newline="") as handle:
            return cls.from_csv(handle.read())
