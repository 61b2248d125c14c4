"""Long-form scenario tables and their CSV/JSON serialization."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("time_or_lambda", "bus", "vsi", "lti", "flag", "event")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.12g}"


@dataclass(frozen=True)
class Row:
    time_or_lambda: float
    bus: int
    vsi: float = math.nan
    lti: float = math.nan
    flag: str = "ok"
    event: str = ""

    def as_csv(self) -> list[str]:
        return [_fmt(self.time_or_lambda), str(self.bus), _fmt(self.vsi), _fmt(self.lti), self.flag, self.event]


@dataclass
class ScenarioResult:
    """Per-bus index values keyed by time (s) or load factor, plus a summary."""

    scenario: str
    rows: list[Row] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    companions: dict[str, "ScenarioResult"] = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def buses(self) -> list[int]:
        return sorted({r.bus for r in self.rows})

    def keys(self) -> np.ndarray:
        return np.array(sorted({r.time_or_lambda for r in self.rows}))

    def series(self, bus: int, column: str = "vsi") -> tuple[np.ndarray, np.ndarray]:
        """(time_or_lambda, values) for one bus, in row order."""
        sel = [r for r in self.rows if r.bus == bus]
        return np.array([r.time_or_lambda for r in sel]), np.array([getattr(r, column) for r in sel], dtype=float)

    def at(self, key: float) -> list[Row]:
        return [r for r in self.rows if r.time_or_lambda == key]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(r.as_csv())

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.scenario
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        self.to_csv(csv_path)
        json_path.write_text(json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n")
        for name, other in sorted(self.companions.items()):
            other.to_csv(out / f"{stem}_{name}.csv")
        return csv_path, json_path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x
