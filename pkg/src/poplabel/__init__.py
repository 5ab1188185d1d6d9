"""Simulation laboratory for unique-labeling population protocols."""
from ._accel import BACKEND
from .engine import Configuration, RunLimits, RunRecord, Scheduler, is_silent, run, state_census, step
from .labeling import PROTOCOLS, build

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Configuration", "RunLimits", "RunRecord", "Scheduler",
    "is_silent", "run", "state_census", "step", "PROTOCOLS", "build",
]
