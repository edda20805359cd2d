"""Discrete-event simulation of a population of nodes running the chain protocol."""

from .network import DelayModel, Envelope, Network, Partition
from .runner import HorizonExceeded, RunResult, Violation, run
from .scenario import Scenario, ScenarioInvalid, from_dict, load

__all__ = [
    "DelayModel",
    "Envelope",
    "Network",
    "Partition",
    "HorizonExceeded",
    "RunResult",
    "Violation",
    "run",
    "Scenario",
    "ScenarioInvalid",
    "from_dict",
    "load",
]
