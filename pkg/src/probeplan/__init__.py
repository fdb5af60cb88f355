"""Neuro-symbolic task planning that probes the scene before acting on unverified beliefs."""

from .engine import EngineConfig, Mode, run_episode
from .simulator import ObservabilityLevel, TabletopEnv, load_scenario_file
from .symbolic import ObservationStore, parse_domain, parse_policy

__version__ = "0.1.0"

__all__ = [
    "EngineConfig", "Mode", "ObservabilityLevel", "ObservationStore", "TabletopEnv",
    "load_scenario_file", "parse_domain", "parse_policy", "run_episode",
]
