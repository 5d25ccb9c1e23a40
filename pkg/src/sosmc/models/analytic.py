"""Closed-form Gibbs families: Gaussian location and the softmax mixture potential."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from .base import GibbsModel


class GaussianLocation(GibbsModel):
    """``U_theta(x) = (x - theta)^T Sigma^{-1} (x - theta) / 2`` with fixed SPD ``Sigma``.

    The induced distribution is ``N(theta, Sigma)``; the normaliser does not
    depend on ``theta``.
    """

    def __init__(self, theta, sigma_cov=None):
        theta = np.asarray(theta, dtype=float).ravel()
        if sigma_cov is None:
            sigma_cov = np.eye(theta.size)
        sigma_cov = np.asarray(sigma_cov, dtype=float)
        if sigma_cov.shape != (theta.size, theta.size):
            raise ValueError("sigma_cov must be d x d for a d-dimensional mean")
        if not np.allclose(sigma_cov, sigma_cov.T):
            raise ValueError("sigma_cov must be symmetric")
        # Cholesky doubles as the positive-definiteness check.
        self._chol = np.linalg.cholesky(sigma_cov)
        self._theta = theta
        self.sigma_cov = sigma_cov
        self.sigma_inv = np.linalg.inv(sigma_cov)
        self.dim = theta.size

    @property
    def theta(self):
        return self._theta.copy()

    def with_theta(self, theta):
        return GaussianLocation(theta, self.sigma_cov)

    def potential_batch(self, x):
        diff = np.atleast_2d(np.asarray(x, dtype=float)) - self._theta
        return 0.5 * np.einsum("ni,ij,nj->n", diff, self.sigma_inv, diff)

    def grad_x_batch(self, x):
        diff = np.atleast_2d(np.asarray(x, dtype=float)) - self._theta
        return diff @ self.sigma_inv

    def grad_theta_batch(self, x):
        return -self.grad_x_batch(x)

    def sample(self, rng, n):
        """Exact draws from ``N(theta, Sigma)``."""
        z = rng.standard_normal((n, self.dim))
        return self._theta + z @ self._chol.T


class MixturePotential(GibbsModel):
    """Softmax-weighted Gaussian-bump potential on a fixed set of means.

    ``U_theta(x) = -log sum_i softmax(theta)_i exp(-|x - mu_i|^2 / sigma_sq)``.

    The induced distribution is a mixture of isotropic Gaussians with means
    ``mu_i`` and per-component covariance ``(sigma_sq / 2) I``; the normaliser
    is independent of ``theta`` because every component integrates to the
    same constant.
    """

    def __init__(self, theta, means, sigma_sq=1.0):
        theta = np.asarray(theta, dtype=float).ravel()
        means = np.atleast_2d(np.asarray(means, dtype=float))
        if means.shape[0] != theta.size:
            raise ValueError("one logit per component mean is required")
        if sigma_sq <= 0:
            raise ValueError("sigma_sq must be positive")
        self._theta = theta
        self.means = means
        self.sigma_sq = float(sigma_sq)
        self.dim = means.shape[1]

    @property
    def theta(self):
        return self._theta.copy()

    def with_theta(self, theta):
        return MixturePotential(theta, self.means, self.sigma_sq)

    @property
    def n_components(self):
        return self.means.shape[0]

    def _log_terms(self, x):
        # log softmax(theta)_i - |x - mu_i|^2 / sigma_sq, shape (N, m)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        log_p = self._theta - logsumexp(self._theta)
        sq = np.sum((x[:, None, :] - self.means[None, :, :]) ** 2, axis=2)
        return log_p[None, :] - sq / self.sigma_sq

    def potential_batch(self, x):
        return -logsumexp(self._log_terms(x), axis=1)

    def _responsibilities(self, x):
        terms = self._log_terms(x)
        return softmax(terms, axis=1)

    def grad_x_batch(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        resp = self._responsibilities(x)
        # d/dx of each bump is -2 (x - mu_i) / sigma_sq inside the log.
        centered = x[:, None, :] - self.means[None, :, :]
        return (2.0 / self.sigma_sq) * np.einsum("nm,nmd->nd", resp, centered)

    def grad_theta_batch(self, x):
        resp = self._responsibilities(np.atleast_2d(np.asarray(x, dtype=float)))
        p = softmax(self._theta)
        return p[None, :] - resp

    def sample(self, rng, n):
        """Exact draws: a component index, then its Gaussian.

        The per-component standard deviation is ``sqrt(sigma_sq / 2)``, the
        value implied by the potential above.
        """
        p = softmax(self._theta)
        idx = rng.choice(self.n_components, size=n, p=p)
        std = np.sqrt(self.sigma_sq / 2.0)
        return self.means[idx] + std * rng.standard_normal((n, self.dim))
