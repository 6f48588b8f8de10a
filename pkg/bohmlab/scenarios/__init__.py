from .base import POSITIVE, Outcome, ParamRange, Scenario, ScenarioDefaults, ScenarioRegistry, Setup
from .library import LIBRARY, default_registry

__all__ = [
    "LIBRARY",
    "POSITIVE",
    "Outcome",
    "ParamRange",
    "Scenario",
    "ScenarioDefaults",
    "ScenarioRegistry",
    "Setup",
    "default_registry",
]
