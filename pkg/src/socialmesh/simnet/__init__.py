"""Deterministic discrete-event simulation and experiment runners."""

from .config import ScenarioConfig, load_config, load_preset, preset_names, validate_config_dict
from .events import Message, SimEvent, Simulator, Sleep
from .experiments import churn_availability_experiment, join_latency_experiment, join_latency_trial, run
from .models import ChurnModel, LatencyModel
from .report import MetricsReport

__all__ = [
    "ChurnModel",
    "LatencyModel",
    "Message",
    "MetricsReport",
    "ScenarioConfig",
    "SimEvent",
    "Simulator",
    "Sleep",
    "churn_availability_experiment",
    "join_latency_experiment",
    "join_latency_trial",
    "load_config",
    "load_preset",
    "preset_names",
    "run",
    "validate_config_dict",
]
