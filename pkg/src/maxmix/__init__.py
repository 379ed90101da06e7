"""
Spatial max-mixture models: simulation, censored pairwise likelihood
fitting, Godambe-based uncertainty and tests of the mixing coefficient.
"""

from .hypothesis_tests import TestReport, boundary_test, lr_test, two_sample_z, z_test
from .inference import (CensoringConfig, FitResult, OptimizerSettings, PairwiseLikelihood,
                        fit_constrained, fit_mm, pairwise_loglik)
from .models import MODELS, MixtureParams, ModelSpec, get_model
from .simulation import DataMatrix, SiteSet, sample_sites_uniform, simulate_mm, simulate_model
from .uncertainty import GodambeEstimate, clic, estimate_godambe_mc, submatrix_a

__version__ = "0.1.0"

__all__ = [
    "CensoringConfig", "DataMatrix", "FitResult", "GodambeEstimate", "MODELS", "MixtureParams",
    "ModelSpec", "OptimizerSettings", "PairwiseLikelihood", "SiteSet", "TestReport",
    "boundary_test", "clic", "estimate_godambe_mc", "fit_constrained", "fit_mm", "get_model",
    "lr_test", "pairwise_loglik", "sample_sites_uniform", "simulate_mm", "simulate_model",
    "submatrix_a", "two_sample_z", "z_test",
]
