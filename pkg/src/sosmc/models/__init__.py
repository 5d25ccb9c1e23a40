"""Parameterised Gibbs models: the contract plus three concrete families."""

from .base import GibbsModel
from .analytic import GaussianLocation, MixturePotential
from .mlp import MlpEnergy
from .io import load_model, model_from_dict, model_to_dict, save_model

__all__ = [
    "GibbsModel",
    "GaussianLocation",
    "MixturePotential",
    "MlpEnergy",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]
