"""Least-squares recovery of step functions observed through a known convolution kernel."""

from .errors import (ConfigError, ContractError, DegenerateFitError, EstimationError,
                     InferenceError, KernelDomainError, QuadratureError, StepDeconvError)
from .estimator import (FitConfig, FitResult, fit_known_k, fit_penalized,
                        heights_given_jumps, select_lambda)
from .inference import (InferenceReport, confidence_intervals, estimate_sigma2, infer,
                        nu_vector, v_matrix)
from .kernels import Kernel, delta_phi, eval_kernel
from .model import Dataset, Density, DesignSpec, forward_eval, read_csv, simulate_dataset
from .signal import StepFunction, hausdorff_jump_distance, jump_count, l2_distance

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DegenerateFitError", "EstimationError",
    "InferenceError", "KernelDomainError", "QuadratureError", "StepDeconvError",
    "FitConfig", "FitResult", "fit_known_k", "fit_penalized", "heights_given_jumps",
    "select_lambda", "InferenceReport", "confidence_intervals", "estimate_sigma2",
    "infer", "nu_vector", "v_matrix", "Kernel", "delta_phi", "eval_kernel", "Dataset",
    "Density", "DesignSpec", "forward_eval", "read_csv", "simulate_dataset",
    "StepFunction", "hausdorff_jump_distance", "jump_count", "l2_distance",
]
