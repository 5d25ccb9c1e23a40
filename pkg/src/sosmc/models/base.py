"""Contract for parameterised Gibbs models ``pi_theta(x) = exp(-U_theta(x)) / Z_theta``.

A model owns its parameter vector ``theta`` and exposes the potential
``U_theta``, its spatial gradient and its per-sample parameter gradient.
The normaliser ``Z_theta`` is never computed by the model itself; closed-form
or quadrature access lives in the diagnostics module.

Models are value objects: parameter updates go through :meth:`with_theta`,
which returns a new instance, so a population propagation pass always sees a
fixed model.
"""

from __future__ import annotations

import abc

import numpy as np

from ..errors import NonFiniteValueError


class GibbsModel(abc.ABC):
    """Potential, spatial gradient and parameter gradient of a Gibbs family."""

    #: dimension of the state space
    dim: int

    # -- parameters ---------------------------------------------------------

    @property
    @abc.abstractmethod
    def theta(self) -> np.ndarray:
        """Copy of the flat parameter vector."""

    @abc.abstractmethod
    def with_theta(self, theta: np.ndarray) -> "GibbsModel":
        """New model of the same family with parameters replaced."""

    @property
    def n_params(self) -> int:
        return self.theta.size

    # -- batched evaluations (the primitive surface) ------------------------

    @abc.abstractmethod
    def potential_batch(self, x: np.ndarray) -> np.ndarray:
        """``U_theta`` row-wise over an ``(N, d)`` array, shape ``(N,)``."""

    @abc.abstractmethod
    def grad_x_batch(self, x: np.ndarray) -> np.ndarray:
        """Spatial gradient row-wise, shape ``(N, d)``."""

    @abc.abstractmethod
    def grad_theta_batch(self, x: np.ndarray) -> np.ndarray:
        """Per-sample parameter gradient, shape ``(N, n_params)``."""

    def energy_and_grad_x_fast(self, x):
        """Potential and spatial gradient together, for hot sampling loops.

        Subclasses may override with a faster fused sweep whose float
        summation order is unconstrained; defaults to the contract methods.
        """
        return self.potential_batch(x), self.grad_x_batch(x)

    # -- single-point conveniences ------------------------------------------

    def potential(self, x: np.ndarray) -> float:
        value = float(self.potential_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0])
        if not np.isfinite(value):
            raise NonFiniteValueError("potential evaluated non-finite")
        return value

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        g = self.grad_x_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0]
        if not np.all(np.isfinite(g)):
            raise NonFiniteValueError("spatial gradient evaluated non-finite")
        return g

    def grad_theta(self, x: np.ndarray) -> np.ndarray:
        g = self.grad_theta_batch(np.atleast_2d(np.asarray(x, dtype=float)))[0]
        if not np.all(np.isfinite(g)):
            raise NonFiniteValueError("parameter gradient evaluated non-finite")
        return g

    # -- linear functionals of the parameter gradient ------------------------

    def grad_theta_weighted_sum(self, x: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """``sum_i c_i * grad_theta U(x_i)`` in one pass, shape ``(n_params,)``.

        Subclasses override this with a fused reverse sweep; the default
        materialises the per-sample gradients.
        """
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        return coeffs @ self.grad_theta_batch(x)
