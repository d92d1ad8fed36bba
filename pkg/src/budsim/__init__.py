"""Simulation and large-sample analysis of Bayesian uncertainty-directed (BUD)
response-adaptive trials.

Set ``BUDSIM_BACKEND=numpy`` (or ``BUDSIM_DISABLE_NUMBA=1``) before import to
run the Monte Carlo kernels without numba.
"""
__version__ = "0.1.0"

from ._backend import backend_name
from .engine import DesignConfig, run_trial
from .errors import BudsimError, ConfigError
from .outcome_models import NefModel, TruncatedWeibullModel

__all__ = [
    "__version__", "backend_name", "DesignConfig", "run_trial", "BudsimError",
    "ConfigError", "NefModel", "TruncatedWeibullModel",
]
