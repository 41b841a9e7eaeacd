"""Automated agile service composition engine.

Select features from a prioritized backlog, generate contract tests from
domain reference models, plan a composite workflow over a service registry,
execute it against simulated services, and replan around blamed services
until the tests pass — iteration by iteration.
"""

from am4sc.controller import EngineConfig, EngineState, run_iteration, run_project
from am4sc.runtime import load_scenario

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "EngineState",
    "load_scenario",
    "run_iteration",
    "run_project",
    "__version__",
]
