"""Scalar energy network with hand-written reverse-mode gradients.

The network is ``input -> h_1 -> ... -> h_L -> scalar`` with a smooth
sigmoid-weighted-linear activation after every hidden layer and a linear
head.  All derivatives are written out explicitly: the forward pass caches
per-layer pre- and post-activations, a reverse sweep produces spatial and
per-sample parameter gradients, and a tangent-carrying sweep produces
parameter gradients of directional spatial derivatives (needed by the
gradient-penalty regulariser in pretraining).  No autodiff framework is
involved, which keeps per-sample parameter gradients cheap.

Contractions use ``einsum`` rather than BLAS matmul: each output row is then
reduced in a fixed order independent of the batch size and thread count, so
batched evaluation is bit-identical to a loop over single samples.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .base import GibbsModel


def silu(z):
    return z * expit(z)


def silu_prime(z):
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


def silu_second(z):
    s = expit(z)
    return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))


class MlpEnergy(GibbsModel):
    """Multilayer perceptron energy ``E_theta: R^d -> R``.

    Parameters
    ----------
    weights : list of ndarray
        Hidden-layer matrices ``W_l`` of shape ``(width, fan_in)`` followed
        by the output vector of shape ``(width,)``.
    biases : list of ndarray
        Hidden-layer biases of shape ``(width,)`` followed by the scalar
        output bias (shape ``()``).
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or len(weights) < 2:
            raise ValueError("need matching weights/biases with at least one hidden layer")
        self.hidden_weights = [np.asarray(w, dtype=float) for w in weights[:-1]]
        self.hidden_biases = [np.asarray(b, dtype=float).ravel() for b in biases[:-1]]
        self.out_weight = np.asarray(weights[-1], dtype=float).ravel()
        self.out_bias = float(np.asarray(biases[-1], dtype=float))
        self.dim = self.hidden_weights[0].shape[1]
        self.hidden_width = self.hidden_weights[0].shape[0]
        self.n_hidden = len(self.hidden_weights)
        for layer, (w, b) in enumerate(zip(self.hidden_weights, self.hidden_biases)):
            fan_in = self.dim if layer == 0 else self.hidden_width
            if w.shape != (self.hidden_width, fan_in) or b.shape != (self.hidden_width,):
                raise ValueError(f"hidden layer {layer} has inconsistent shapes")
        if self.out_weight.shape != (self.hidden_width,):
            raise ValueError("output weight must match the hidden width")

    @classmethod
    def initialize(cls, input_dim, hidden_width=32, n_hidden=4, rng=None, weight_std=0.02):
        """Fresh network: weights ~ N(0, weight_std^2), biases zero."""
        rng = np.random.default_rng() if rng is None else rng
        weights, biases = [], []
        fan_in = input_dim
        for _ in range(n_hidden):
            weights.append(weight_std * rng.standard_normal((hidden_width, fan_in)))
            biases.append(np.zeros(hidden_width))
            fan_in = hidden_width
        weights.append(weight_std * rng.standard_normal(hidden_width))
        biases.append(np.zeros(()))
        return cls(weights, biases)

    # -- flat parameter vector ------------------------------------------------

    @property
    def theta(self):
        parts = []
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            parts.append(w.ravel())
            parts.append(b)
        parts.append(self.out_weight)
        parts.append(np.atleast_1d(self.out_bias))
        return np.concatenate(parts)

    def with_theta(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        weights, biases = [], []
        offset = 0
        fan_in = self.dim
        for _ in range(self.n_hidden):
            size = self.hidden_width * fan_in
            weights.append(theta[offset:offset + size].reshape(self.hidden_width, fan_in))
            offset += size
            biases.append(theta[offset:offset + self.hidden_width].copy())
            offset += self.hidden_width
            fan_in = self.hidden_width
        weights.append(theta[offset:offset + self.hidden_width].copy())
        offset += self.hidden_width
        biases.append(np.asarray(theta[offset]))
        return MlpEnergy(weights, biases)

    @property
    def n_params(self):
        count = 0
        fan_in = self.dim
        for _ in range(self.n_hidden):
            count += self.hidden_width * (fan_in + 1)
            fan_in = self.hidden_width
        return count + self.hidden_width + 1

    # -- forward -----------------------------------------------------------

    def _forward(self, x):
        """Cache activations: returns (list of a_l incl. input, list of z_l, energy)."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        activations = [a]
        preacts = []
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            z = np.einsum("ni,ki->nk", a, w) + b
            preacts.append(z)
            a = silu(z)
            activations.append(a)
        energy = np.einsum("nh,h->n", a, self.out_weight) + self.out_bias
        return activations, preacts, energy

    def potential_batch(self, x):
        return self._forward(x)[2]

    def energy_and_grad_x_fast(self, x):
        """Energy and spatial gradient in one BLAS-backed sweep.

        Numerically equal to the einsum paths up to summation order, but the
        last bits may depend on the batch size; intended for hot sampling
        loops, where only same-shape run-to-run determinism matters.  The
        sigmoid of every pre-activation is computed once and shared between
        the activation and its derivative.
        """
        a = np.atleast_2d(np.asarray(x, dtype=float))
        cache = []
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            z = a @ w.T + b
            s = expit(z)
            cache.append((z, s))
            a = z * s
        energy = a @ self.out_weight + self.out_bias
        delta = np.broadcast_to(self.out_weight, a.shape)
        for layer in range(self.n_hidden - 1, -1, -1):
            z, s = cache[layer]
            delta = (delta * (s * (1.0 + z * (1.0 - s)))) @ self.hidden_weights[layer]
        return energy, delta

    def grad_x_batch(self, x):
        activations, preacts, _ = self._forward(x)
        delta = np.broadcast_to(self.out_weight, activations[-1].shape)
        for layer in range(self.n_hidden - 1, -1, -1):
            dz = delta * silu_prime(preacts[layer])
            delta = np.einsum("nk,ki->ni", dz, self.hidden_weights[layer])
        return delta

    def grad_theta_batch(self, x):
        """Per-sample parameter gradients, shape ``(N, n_params)``."""
        activations, preacts, _ = self._forward(x)
        n = activations[0].shape[0]
        blocks = [None] * (2 * self.n_hidden + 2)
        delta = np.broadcast_to(self.out_weight, activations[-1].shape)
        blocks[-2] = activations[-1]                       # d/d out_weight
        blocks[-1] = np.ones((n, 1))                       # d/d out_bias
        for layer in range(self.n_hidden - 1, -1, -1):
            dz = delta * silu_prime(preacts[layer])
            blocks[2 * layer] = np.einsum("ni,nj->nij", dz, activations[layer]).reshape(n, -1)
            blocks[2 * layer + 1] = dz
            delta = np.einsum("nk,ki->ni", dz, self.hidden_weights[layer])
        return np.concatenate(blocks, axis=1)

    def grad_theta_weighted_sum(self, x, coeffs):
        """Fused ``sum_i c_i grad_theta E(x_i)`` without materialising per-sample rows."""
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        activations, preacts, _ = self._forward(x)
        parts = [None] * (2 * self.n_hidden + 2)
        parts[-2] = np.einsum("n,nh->h", coeffs, activations[-1])
        parts[-1] = np.atleast_1d(np.sum(coeffs))
        delta = coeffs[:, None] * self.out_weight
        for layer in range(self.n_hidden - 1, -1, -1):
            dz = delta * silu_prime(preacts[layer])
            parts[2 * layer] = np.einsum("nk,ni->ki", dz, activations[layer]).ravel()
            parts[2 * layer + 1] = np.sum(dz, axis=0)
            delta = np.einsum("nk,ki->ni", dz, self.hidden_weights[layer])
        return np.concatenate(parts)

    def grad_theta_directional_x(self, x, v):
        """``grad_theta sum_i v_i . grad_x E(x_i)`` with ``v`` held constant.

        A tangent in direction ``v`` is pushed forward alongside the
        activations; the reverse sweep then carries paired adjoints for the
        activations and their tangents down to every parameter.  Shape
        ``(n_params,)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        activations, preacts, _ = self._forward(x)
        tangents_a = [v]
        tangents_z = []
        phi1 = [silu_prime(z) for z in preacts]
        for layer in range(self.n_hidden):
            tz = np.einsum("ni,ki->nk", tangents_a[-1], self.hidden_weights[layer])
            tangents_z.append(tz)
            tangents_a.append(phi1[layer] * tz)

        n = x.shape[0]
        parts = [None] * (2 * self.n_hidden + 2)
        # Scalar target D = sum_i out_weight . tangent_a_L[i]; the output bias
        # and the plain activations do not enter D at the head.
        parts[-2] = np.sum(tangents_a[-1], axis=0)
        parts[-1] = np.zeros(1)
        a_bar = np.zeros_like(activations[-1])
        t_bar = np.broadcast_to(self.out_weight, (n, self.hidden_width)).copy()
        for layer in range(self.n_hidden - 1, -1, -1):
            z = preacts[layer]
            z_bar = a_bar * phi1[layer] + t_bar * silu_second(z) * tangents_z[layer]
            tz_bar = t_bar * phi1[layer]
            parts[2 * layer] = (np.einsum("nk,ni->ki", z_bar, activations[layer])
                                + np.einsum("nk,ni->ki", tz_bar, tangents_a[layer])).ravel()
            parts[2 * layer + 1] = np.sum(z_bar, axis=0)
            a_bar = np.einsum("nk,ki->ni", z_bar, self.hidden_weights[layer])
            t_bar = np.einsum("nk,ki->ni", tz_bar, self.hidden_weights[layer])
        return np.concatenate(parts)
