"""Gaussian mixture densities and fitters (EM and stick-breaking variational)."""

from .bgmm import fit_bgmm, truncation_level
from .em import fit_gmm_em
from .gaussian import (
    component_log_densities,
    dataset_log_likelihood,
    gaussian_log_density,
    mixture_log_likelihood,
    mixture_log_likelihoods,
)
from .model import FitConfig, FitReport, MixtureModel, effective_components, load_model, save_model

__all__ = [
    "FitConfig",
    "FitReport",
    "MixtureModel",
    "component_log_densities",
    "dataset_log_likelihood",
    "effective_components",
    "fit_bgmm",
    "fit_gmm_em",
    "gaussian_log_density",
    "load_model",
    "mixture_log_likelihood",
    "mixture_log_likelihoods",
    "save_model",
    "truncation_level",
]
