"""Convex synthesis of robust force and admittance controllers for robots in contact.

The controller is parametrized by a finite impulse response ``Q`` acting on
the internal-model loop, which makes every closed-loop map affine in the
parameters.  Specs (tracking, steady state, frequency bounds, passivity and
robust stability over an interval of environment stiffness) become convex
constraints solved by a bundled conic solver.
"""

__version__ = "0.1.0"

from .lti import StateSpace, TransferFunction, FrequencyGrid, closed_loop, is_stable  # noqa: E402
from .plant import (RobotModel, SpringEnvironment, HumanModel, GeneralizedPlant,  # noqa: E402
                    build_force_plant, build_admittance_plant, particular_plant)
from .youla import InternalModelController, make_tensors, assemble_H  # noqa: E402
from .synthesis import SynthesisProblem, RobustSpec, synthesize  # noqa: E402
from .solve import compile, solve, verify_solution  # noqa: E402
from .config import load_config, parse_config, shipped_config  # noqa: E402

__all__ = [
    "__version__", "StateSpace", "TransferFunction", "FrequencyGrid", "closed_loop", "is_stable",
    "RobotModel", "SpringEnvironment", "HumanModel", "GeneralizedPlant", "build_force_plant",
    "build_admittance_plant", "particular_plant", "InternalModelController", "make_tensors",
    "assemble_H", "SynthesisProblem", "RobustSpec", "synthesize", "compile", "solve",
    "verify_solution", "load_config", "parse_config", "shipped_config",
]
