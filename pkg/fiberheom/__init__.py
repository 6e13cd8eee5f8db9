"""
fiberheom package.

Hierarchical equations of motion for two photons dephased by fluctuating
fiber birefringence, with concurrence tracking and CPMG/UDD decoupling.
"""

from fiberheom.analysis import (
    Trajectory,
    concurrence,
    dephasing_oracle,
    distance_to_threshold,
    non_markovianity,
)
from fiberheom.control import PulseKind, PulseMode, PulseSequence, build_sequence
from fiberheom.heom import IntegratorConfig, convergence_check, evolve
from fiberheom.model import BellState, FiberParams, ModelConfig, Topology, derive_params

__version__ = "0.1.0"

__all__ = [
    # Model
    "FiberParams",
    "ModelConfig",
    "Topology",
    "BellState",
    "derive_params",
    # Solver
    "IntegratorConfig",
    "evolve",
    "convergence_check",
    # Control
    "PulseKind",
    "PulseMode",
    "PulseSequence",
    "build_sequence",
    # Analysis
    "Trajectory",
    "concurrence",
    "dephasing_oracle",
    "distance_to_threshold",
    "non_markovianity",
]
