"""Log-Gaussian gamma process inference.

Gamma observations whose log-shape and log-rate fields carry Gaussian
process priors, fitted by NUTS on the joint posterior, by iterated
posterior linearization followed by NUTS on the hyperparameters, or by
linearization followed by a tempered NUTS sequence.
"""
from .exceptions import InvalidInputError, LggpError, NumericalFailureError
from .model import PRESETS, Dataset, HyperPriorSpec, ProcessPrior
from .sampler import HmcConfig, run_chain
from .schemes import (
    InferenceResult,
    TemperSchedule,
    fit_direct_hmc,
    fit_pl_approx,
    fit_pl_tempered,
    predict_data,
    predict_latent,
    simulate_lggp,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "HmcConfig",
    "HyperPriorSpec",
    "InferenceResult",
    "InvalidInputError",
    "LggpError",
    "NumericalFailureError",
    "PRESETS",
    "ProcessPrior",
    "TemperSchedule",
    "fit_direct_hmc",
    "fit_pl_approx",
    "fit_pl_tempered",
    "predict_data",
    "predict_latent",
    "run_chain",
    "simulate_lggp",
]
