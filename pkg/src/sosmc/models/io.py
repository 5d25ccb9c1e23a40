"""JSON serialisation of model parameters.

Documents carry a family tag, an architecture descriptor and a flat float64
parameter array, so pretraining and tuning can run as separate processes.
Floats round-trip exactly through ``json`` (shortest-repr encoding).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from .analytic import GaussianLocation, MixturePotential
from .mlp import MlpEnergy


def model_to_dict(model) -> dict:
    if isinstance(model, GaussianLocation):
        return {
            "family": "gaussian_location",
            "dim": model.dim,
            "sigma_cov": model.sigma_cov.tolist(),
            "params": model.theta.tolist(),
        }
    if isinstance(model, MixturePotential):
        return {
            "family": "mixture_potential",
            "means": model.means.tolist(),
            "sigma_sq": model.sigma_sq,
            "params": model.theta.tolist(),
        }
    if isinstance(model, MlpEnergy):
        return {
            "family": "mlp_energy",
            "input_dim": model.dim,
            "hidden_width": model.hidden_width,
            "hidden_layers": model.n_hidden,
            "params": model.theta.tolist(),
        }
    raise ConfigurationError(f"cannot serialise model of type {type(model).__name__}")


def model_from_dict(doc: dict):
    family = doc.get("family")
    params = np.asarray(doc.get("params", []), dtype=float)
    if family == "gaussian_location":
        return GaussianLocation(params, np.asarray(doc["sigma_cov"], dtype=float))
    if family == "mixture_potential":
        return MixturePotential(params, np.asarray(doc["means"], dtype=float),
                                float(doc["sigma_sq"]))
    if family == "mlp_energy":
        template = MlpEnergy.initialize(
            input_dim=int(doc["input_dim"]),
            hidden_width=int(doc["hidden_width"]),
            n_hidden=int(doc["hidden_layers"]),
            rng=np.random.default_rng(0),
        )
        return template.with_theta(params)
    raise ConfigurationError(f"unknown model family {family!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
