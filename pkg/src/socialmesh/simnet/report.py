from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any

CSV_COLUMNS = ("experiment", "N", "seed", "phase", "metric", "value")


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(round(v, 9))
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, float):
        return round(v, 9)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class MetricsReport:
    """Rows of measurements plus a summary and named pass/fail checks.

    Both renderings depend only on the stored data, so a rerun with the same
    config and seed produces identical bytes.
    """

    experiment: str
    seed: int
    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, n: int, seed: int, phase: str, metric: str, value: Any) -> None:
        self.rows.append((self.experiment, n, seed, phase, metric, value))

    def check(self, name: str, ok: bool) -> bool:
        self.checks[name] = bool(ok)
        return bool(ok)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return sorted(k for k, v in self.checks.items() if not v)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "experiment": self.experiment,
            "seed": self.seed,
            "config": self.config,
            "summary": self.summary,
            "checks": self.checks,
            "notes": list(self.notes),
            "rows": [list(r) for r in self.rows],
        }
        return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown format {fmt!r}")
