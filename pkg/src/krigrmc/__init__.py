"""Kriging metamodels and experimental design for regression Monte Carlo
pricing of Bermudan options."""

from .contracts import ContractSpec
from .design import DesignDomain, batch_stats, halton, lhs, sobol
from .engine import (DesignConfig, RegressionConfig, StoppingPolicy, backward_induction,
                     local_loss, out_of_sample_value)
from .kriging import FitFailure, StochasticKriging
from .lsmc import BasisSpec, BW11Regressor, PolynomialRegressor, lsmc_backward
from .models import GbmModel, SvModel, TimeGrid
from .pricing import KrigingRMC, LSMCPricer, Problem
from .sequential import SequentialConfig, grow_design

__all__ = [
    "BW11Regressor", "BasisSpec", "ContractSpec", "DesignConfig", "DesignDomain", "FitFailure",
    "GbmModel", "KrigingRMC", "LSMCPricer", "PolynomialRegressor", "Problem", "RegressionConfig",
    "SequentialConfig", "StochasticKriging", "StoppingPolicy", "SvModel", "TimeGrid",
    "backward_induction", "batch_stats", "grow_design", "halton", "lhs", "local_loss",
    "lsmc_backward", "out_of_sample_value", "sobol",
]
