"""softloco: muscle-driven soft-body locomotion control.

The differentiation core promotes a reverse-mode tape to complex
arithmetic: perturbing one input along the imaginary axis turns a single
forward/reverse pass into one exact-to-roundoff Hessian column, so a
contact-in-the-loop implicit FEM loss can be minimized with full Newton
steps.
"""

from .csfd import CScalar, PerturbStep, csfd_derivative, DEFAULT_H
from .tape import Tape, Var, gradient, hessian, hessian_column
from .elastic import MaterialParams, SimState
from .contact import BarrierParams, HalfSpace, Sphere
from .muscle import MuscleFiber, WeightTable, precompute_weights
from .sim import SceneModel, StepConfig, ForwardResult, step
from .objectives import LossSpec, Target, total_loss
from .optimize import (OptimizerConfig, SolveReport, solve_frame, rollout,
                       simulate, loss_gradient, loss_hessian)
from .scenario import (Scenario, load_scenario, load_config_file,
                       builtin_config, builtin_scenario, builtin_names)

__version__ = "0.1.0"
