"""Splitting scheme for a stochastic compressible fluid coupled to a viscoelastic plate."""
from .orchestrator import SchemeParams, Setup, Trajectory, parameter_sweep, prepare_initial_data, run_ensemble, run_path

__all__ = ["SchemeParams", "Setup", "Trajectory", "parameter_sweep", "prepare_initial_data", "run_ensemble",
           "run_path"]
__version__ = "0.1.0"
