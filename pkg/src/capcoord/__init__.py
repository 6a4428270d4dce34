"""Capacitated inventory control with Lagrangian capacity coordination.

Simulation core, capacity-curve sampling, coordination mechanisms (teacher
forcing, MPC dual search, neural forecaster), differentiable training, and a
backtest harness, all runnable from the ``capcoord`` CLI.
"""

from .backtest import (BoundInputs, EvalReport, generalization_check,
                       inner_lagrangian, metrics, theorem_bound,
                       violation_functionals)
from .capacity_sampler import (HaarIndex, SamplerConfig, sample_capacity_path,
                               sample_path, total_variation)
from .coordinators import (DualSearchConfig, MPCCoordinator, NeuralCoordinator,
                           NeuralCoordinatorConfig, TeacherForcingCoordinator,
                           dual_search, mpc_coordinate, teacher_forcing)
from .idp_core import (CapacityPath, ExoSeries, InventoryState, Population,
                       PriceTrajectory, RolloutLedger, penalized_reward,
                       rollout, step)
from .policies import (BaseStockConfig, BaseStockPolicy, NeuralPolicy,
                       NeuralPolicyConfig, base_stock_action, neural_action)
from .synth_data import PopulationConfig, generate
from .tape import NumericFault, ParamVector, Tape, Var
from .training import (DualState, TrainConfig, dagger_coordinator,
                       train_coordinator, train_policy)

__version__ = "0.1.0"

__all__ = [
    "BoundInputs", "EvalReport", "generalization_check", "inner_lagrangian",
    "metrics", "theorem_bound", "violation_functionals",
    "HaarIndex", "SamplerConfig", "sample_capacity_path", "sample_path",
    "total_variation",
    "DualSearchConfig", "MPCCoordinator", "NeuralCoordinator",
    "NeuralCoordinatorConfig", "TeacherForcingCoordinator", "dual_search",
    "mpc_coordinate", "teacher_forcing",
    "CapacityPath", "ExoSeries", "InventoryState", "Population",
    "PriceTrajectory", "RolloutLedger", "penalized_reward", "rollout", "step",
    "BaseStockConfig", "BaseStockPolicy", "NeuralPolicy", "NeuralPolicyConfig",
    "base_stock_action", "neural_action",
    "PopulationConfig", "generate",
    "NumericFault", "ParamVector", "Tape", "Var",
    "DualState", "TrainConfig", "dagger_coordinator", "train_coordinator",
    "train_policy",
    "__version__",
]
