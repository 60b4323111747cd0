from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

DEFAULT_LATENCY_MIN = 0.02
DEFAULT_LATENCY_MAX = 0.20
DEFAULT_MEAN_SESSION = 1800.0
DEFAULT_MEAN_DOWNTIME = 1800.0


@dataclass(frozen=True)
class LatencyModel:
    """Per-message one-way delay in seconds: constant or uniform(min, max)."""

    kind: str = "uniform"
    min: float = DEFAULT_LATENCY_MIN
    max: float = DEFAULT_LATENCY_MAX

    def __post_init__(self):
        if self.kind not in ("constant", "uniform"):
            raise ValueError(f"unknown latency kind {self.kind!r}")
        if self.min < 0 or self.max < self.min:
            raise ValueError("latency needs 0 <= min <= max")

    @classmethod
    def constant(cls, seconds: float) -> "LatencyModel":
        return cls("constant", seconds, seconds)

    def sample(self, rng: random.Random) -> float:
        if self.kind == "constant":
            return self.min
        return rng.uniform(self.min, self.max)

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.min}
        return {"kind": "uniform", "min": self.min, "max": self.max}

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyModel":
        if d.get("kind") == "constant":
            return cls.constant(float(d["value"]))
        return cls("uniform", float(d.get("min", DEFAULT_LATENCY_MIN)), float(d.get("max", DEFAULT_LATENCY_MAX)))


@dataclass(frozen=True)
class ChurnModel:
    """Alternating exponential up/down periods for each member."""

    mean_session: float = DEFAULT_MEAN_SESSION
    mean_downtime: float = DEFAULT_MEAN_DOWNTIME
    population: Optional[int] = None

    def __post_init__(self):
        if self.mean_session <= 0 or self.mean_downtime <= 0:
            raise ValueError("churn means must be positive")

    @property
    def up_fraction(self) -> float:
        return self.mean_session / (self.mean_session + self.mean_downtime)

    def session(self, rng: random.Random) -> float:
        return rng.expovariate(1.0 / self.mean_session)

    def downtime(self, rng: random.Random) -> float:
        return rng.expovariate(1.0 / self.mean_downtime)

    def to_dict(self) -> dict:
        d = {"mean_session": self.mean_session, "mean_downtime": self.mean_downtime}
        if self.population is not None:
            d["population"] = self.population
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChurnModel":
        return cls(float(d.get("mean_session", DEFAULT_MEAN_SESSION)),
                   float(d.get("mean_downtime", DEFAULT_MEAN_DOWNTIME)),
                   d.get("population"))
