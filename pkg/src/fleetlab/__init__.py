"""fleetlab: heterogeneous-fleet capacitated vehicle routing lab.

Neural actor-critic solver trained with advantage actor-critic on a
purpose-built reverse-mode autodiff core, classical savings/sweep heuristics,
an exhaustive oracle for tiny instances, and a CLI for experiments.
"""

from .instances import (
    ExperimentConfig,
    ProblemInstance,
    generate_instance,
    generate_test_set,
    read_instance,
    total_demand,
    write_instance,
)
from .env import RoutePlan, Tour, episode_cost, finalize, reset, step
from .solvers import (
    BruteForceSolver,
    ClarkeWrightSolver,
    DrlSolver,
    RandomSolver,
    SweepSolver,
)
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BruteForceSolver",
    "ClarkeWrightSolver",
    "DrlSolver",
    "ExperimentConfig",
    "ProblemInstance",
    "RandomSolver",
    "RoutePlan",
    "SweepSolver",
    "Tour",
    "TrainConfig",
    "episode_cost",
    "finalize",
    "generate_instance",
    "generate_test_set",
    "read_instance",
    "reset",
    "step",
    "total_demand",
    "train",
    "write_instance",
    "__version__",
]
