"""LMI analysis of linear systems in feedback with conic uncertainty.

Certificates for ultimate boundedness under bounded disturbances and for
quadratic stability, an independent checker, and a simulator for empirical
validation.
"""

__version__ = "0.1.0"

from .certificate import AnalysisCertificate, check_certificate, replay_proof_chain, ultimate_bound
from .config import LambdaGrid, SimulationConfig, SolverOptions, SweepSpec
from .model import (
    BuiltinClass,
    MultiplierStructure,
    SystemModel,
    norm_bounded,
    sector_scalar,
    validate_model,
)
from .sdp import lambda_search, solve_stability

__all__ = [
    "AnalysisCertificate", "BuiltinClass", "LambdaGrid", "MultiplierStructure", "SimulationConfig",
    "SolverOptions", "SweepSpec", "SystemModel", "check_certificate", "lambda_search", "norm_bounded",
    "replay_proof_chain", "sector_scalar", "solve_stability", "ultimate_bound", "validate_model",
]
