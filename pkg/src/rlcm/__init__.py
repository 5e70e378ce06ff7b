"""Exploratory restricted latent class models with a multivariate probit
structural model, fitted by parameter-expanded Metropolis-within-Gibbs."""

from rlcm.model import ModelConfig, build_effect_table
from rlcm.sampler import ChainOutput, ChainState, FitData, run_chain

__all__ = ["ModelConfig", "build_effect_table", "FitData", "ChainState", "ChainOutput", "run_chain"]
__version__ = "0.1.0"
