"""Distributed predictive steering and slip estimation for a
tractor-trailer pair.

The package couples a kinematic two-body vehicle model with:

* a real-time-iteration NMPC engine (multiple shooting, condensing,
  dense active-set box QP) in four architectural flavors: cooperative,
  independent, centralized, and decentralized;
* a moving-horizon estimator that tracks the full vehicle state and
  three slip factors from noisy position/hitch/odometry measurements;
* a closed-loop simulation harness with CSV/JSON artifacts, metrics,
  and report figures, exposed through the ``trailermpc`` CLI.
"""

from .config import ExperimentConfig, default_config, load_config
from .errors import (ConfigError, EstimatorError, IntegrationError,
                     ModelError, QpError, QpIterationError, SchemaError,
                     SolverError, TrailerMpcError)
from .harness import (RunResult, compare_variants, run_estimation_scenario,
                      run_experiment)
from .model import (ControlInput, Measurement, Plant, SlipParams,
                    VehicleGeometry, VehicleState)
from .nmhe import EstimatorConfig, MovingHorizonEstimator
from .nmpc import ControllerConfig, ControllerWeights, NmpcController
from .reference import PathBuilder, TrajectorySpec, benchmark_path

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ControlInput", "ControllerConfig", "ControllerWeights",
    "EstimatorConfig", "EstimatorError", "ExperimentConfig",
    "IntegrationError", "Measurement", "ModelError",
    "MovingHorizonEstimator", "NmpcController", "PathBuilder", "Plant",
    "QpError", "QpIterationError", "RunResult", "SchemaError", "SlipParams",
    "SolverError", "TrailerMpcError", "TrajectorySpec", "VehicleGeometry",
    "VehicleState", "benchmark_path", "compare_variants", "default_config",
    "load_config", "run_estimation_scenario", "run_experiment",
    "__version__",
]
