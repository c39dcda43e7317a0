"""Latent-variable Gaussian processes for mixed inputs and multi-source data."""

from .analysis import SensitivityReport, nis, nrmse, s_cat, sobol_indices
from .bayesopt import BOConfig, BOState, propose_next, run_bo
from .calibration import CalibrationConfig, CalibrationPosterior, calibrate
from .exceptions import ContractError, MetricUndefinedError, NumericalSingularityError, TrainingFailedError
from .kernels import KernelConfig, UnifiedInput, eval_correlation
from .model import LatentGP
from .multifidelity import ensemble_predict, fit_deterministic_mf, fit_probabilistic_mf
from .persistence import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "BOConfig",
    "BOState",
    "CalibrationConfig",
    "CalibrationPosterior",
    "ContractError",
    "KernelConfig",
    "LatentGP",
    "MetricUndefinedError",
    "NumericalSingularityError",
    "SensitivityReport",
    "TrainingFailedError",
    "UnifiedInput",
    "calibrate",
    "ensemble_predict",
    "eval_correlation",
    "fit_deterministic_mf",
    "fit_probabilistic_mf",
    "load_model",
    "nis",
    "nrmse",
    "propose_next",
    "run_bo",
    "s_cat",
    "save_model",
    "sobol_indices",
]
