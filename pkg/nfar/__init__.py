"""Simulation, condition checks and kernel learning for nonlinear functional autoregressive fields."""

from .dynamics import NfarModel, NfarPath, apply_true_operator, simulate_path
from .experiment import ExperimentConfig, load_config, run_replication, run_sweep
from .gp_sampler import NoiseSampler, StationaryKernel, build_spectrum
from .grid import GridField, GridSpec
from .learner import OperatorModel, TrainConfig, apply_operator, empirical_risk, train
from .network import MlpArchitecture, MlpParams

__version__ = "0.1.0"
