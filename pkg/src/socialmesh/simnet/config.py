"""Scenario configuration: JSON schema validation plus semantic checks, and
the shipped presets."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema

from ..errors import InvalidConfig
from .models import ChurnModel, LatencyModel

EXPERIMENTS = ("join_latency", "churn_availability", "demo", "invariants")
DEMO_MIN_DIRECTORY = 4


def _schema() -> dict:
    text = resources.files("socialmesh").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        m = re.match(r"'([^']+)'", err.message)
        if m:
            parts.append(m.group(1))
    elif err.validator == "additionalProperties":
        m = re.search(r"\('([^']+)'", err.message)
        if m:
            parts.append(m.group(1))
    return ".".join(parts) or "<root>"


def _population(d: dict) -> int:
    sizes = [d.get("directory_size", 1)]
    sizes += d.get("sizes") or []
    sizes += d.get("profile_sizes") or []
    churn = d.get("churn")
    if isinstance(churn, dict) and churn.get("population"):
        sizes.append(churn["population"])
    return max(s for s in sizes if isinstance(s, int))


def validate_config_dict(d: object) -> list[tuple[str, str]]:
    """Every problem with ``d`` as (field path, message); empty when valid."""
    validator = jsonschema.Draft7Validator(_schema())
    violations = [(_error_path(e), e.message) for e in sorted(validator.iter_errors(d), key=lambda e: (list(map(str, e.absolute_path)), e.message))]
    if not isinstance(d, dict):
        return violations
    bits = d.get("address_bits", 160)
    if isinstance(bits, int) and not isinstance(bits, bool):
        try:
            pop = _population(d)
        except (TypeError, ValueError):
            pop = None
        # keep the id space at least 4x larger than the busiest overlay
        if pop is not None and bits >= 0 and pop > (1 << max(bits - 2, 0)):
            violations.append(("address_bits", f"population {pop} exceeds address space safety margin 2^({bits}-2)"))
    lat = d.get("latency")
    if isinstance(lat, dict) and lat.get("kind") == "uniform":
        lo, hi = lat.get("min"), lat.get("max")
        if isinstance(lo, (int, float)) and isinstance(hi, (int, float)) and lo > hi:
            violations.append(("latency.min", "min must not exceed max"))
    sizes = d.get("sizes")
    if isinstance(sizes, list) and all(isinstance(s, int) for s in sizes) and sizes != sorted(sizes):
        violations.append(("sizes", "sizes must be ascending"))
    exp = d.get("experiment")
    if exp == "churn_availability":
        ps = d.get("profile_sizes")
        if not ps:
            violations.append(("profile_sizes", "churn_availability needs a profile size"))
        elif isinstance(ps[0], int) and ps[0] < 2:
            violations.append(("profile_sizes.0", "profile size must be at least 2"))
    if exp == "demo" and isinstance(d.get("directory_size"), int) and d["directory_size"] < DEMO_MIN_DIRECTORY:
        violations.append(("directory_size", f"demo needs at least {DEMO_MIN_DIRECTORY} peers"))
    return violations


@dataclass(frozen=True)
class ScenarioConfig:
    experiment: str
    seed: int = 0
    address_bits: int = 160
    directory_size: int = 64
    profile_sizes: tuple = (32,)
    replication: int = 3
    latency: LatencyModel = field(default_factory=LatencyModel)
    churn: Optional[ChurnModel] = None
    duration: float = 86400.0
    sizes: Optional[tuple] = None
    trials: int = 20
    posts: int = 24
    probe_interval: float = 60.0
    maintenance_interval: float = 5.0
    finger_interval: float = 300.0
    availability_threshold: Optional[float] = None
    provider: str = "test"
    name: str = ""
    notes: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        problems = validate_config_dict(d)
        if problems:
            raise InvalidConfig(problems)
        kw = dict(d)
        if "latency" in kw:
            kw["latency"] = LatencyModel.from_dict(kw["latency"])
        if kw.get("churn") is not None:
            kw["churn"] = ChurnModel.from_dict(kw["churn"])
        for k in ("profile_sizes", "sizes", "notes"):
            if kw.get(k) is not None:
                kw[k] = tuple(kw[k])
        for k in ("duration", "probe_interval", "maintenance_interval", "finger_interval"):
            if k in kw:
                kw[k] = float(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {
            "experiment": self.experiment,
            "seed": self.seed,
            "address_bits": self.address_bits,
            "directory_size": self.directory_size,
            "profile_sizes": list(self.profile_sizes),
            "replication": self.replication,
            "latency": self.latency.to_dict(),
            "churn": None if self.churn is None else self.churn.to_dict(),
            "duration": self.duration,
            "trials": self.trials,
            "posts": self.posts,
            "probe_interval": self.probe_interval,
            "maintenance_interval": self.maintenance_interval,
            "finger_interval": self.finger_interval,
            "availability_threshold": self.availability_threshold,
            "provider": self.provider,
            "name": self.name,
            "notes": list(self.notes),
        }
        if self.sizes is not None:
            d["sizes"] = list(self.sizes)
        return d

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfig([("<root>", f"not valid JSON: {exc}")]) from exc
    return ScenarioConfig.from_dict(data)


def preset_names() -> list[str]:
    root = resources.files("socialmesh").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_dict(name: str) -> dict:
    res = resources.files("socialmesh").joinpath(f"presets/{name}.json")
    if not res.is_file():
        raise KeyError(f"no preset named {name!r}; have {', '.join(preset_names())}")
    return json.loads(res.read_text())


def load_preset(name: str) -> ScenarioConfig:
    return ScenarioConfig.from_dict(preset_dict(name))
