"""Data-driven predictive leading cruise control for mixed traffic.

Nonlinear platoon simulation, linear analysis, Hankel-matrix data handling,
a dense QP solver, the DeeP-LCC and MPC controllers, and experiment drivers.
"""

from ._accel import HAVE_NUMBA, USE_NUMBA
from .analysis import AnalysisReport, analyze
from .data import (HankelSet, TrajectoryDataset, build_hankel_set,
                   collect_offline, hankel, is_persistently_exciting,
                   load_dataset, min_data_length, save_dataset)
from .deepc import (DeepLccConfig, DeepLccController, PastBuffer,
                    assemble_qp, control_step, estimate_equilibrium,
                    update_past)
from .experiments import (RunMetrics, ScenarioSpec, batch, fuel_rate, msve,
                          run_experiment, scenario_brake, scenario_cycle,
                          scenario_sinusoid)
from .mpc import MpcConfig, MpcController, estimate_initial_state, mpc_step
from .qp import QpSolution, QpWorkspace, QuadProgram, solve
from .traffic import (NOMINAL, TABLE_HETEROGENEOUS, DiscreteModel,
                      Equilibrium, HdvParams, LinearCoeffs, MixedConfig,
                      StateSpaceModel, TrafficState)

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA", "USE_NUMBA", "AnalysisReport", "analyze", "HankelSet",
    "TrajectoryDataset", "build_hankel_set", "collect_offline", "hankel",
    "is_persistently_exciting", "load_dataset", "min_data_length",
    "save_dataset", "DeepLccConfig", "DeepLccController", "PastBuffer",
    "assemble_qp", "control_step", "estimate_equilibrium", "update_past",
    "RunMetrics", "ScenarioSpec", "batch", "fuel_rate", "msve",
    "run_experiment", "scenario_brake", "scenario_cycle", "scenario_sinusoid",
    "MpcConfig", "MpcController", "estimate_initial_state", "mpc_step",
    "QpSolution", "QpWorkspace", "QuadProgram", "solve", "NOMINAL",
    "TABLE_HETEROGENEOUS", "DiscreteModel", "Equilibrium", "HdvParams",
    "LinearCoeffs", "MixedConfig", "StateSpaceModel", "TrafficState",
    "__version__",
]
