"""Weighted particle populations.

Positions are an ``(N, d)`` array and weights are kept in the log domain as
unnormalised log-weights.  Normalisation always recenters by the maximum
before exponentiating, so any common additive constant in the log-weights is
irrelevant.  Resampling is categorical (multinomial) from an explicit
generator so runs replay bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateWeightsError, NonFiniteValueError

__all__ = [
    "ParticleSystem",
    "normalize_weights",
    "ess",
    "resample",
    "weighted_mean",
]


@dataclass(frozen=True)
class ParticleSystem:
    """Particle positions plus unnormalised log-weights at one iteration.

    Parameters
    ----------
    positions : ndarray, shape (N, d)
        Particle states.  Must be finite.
    log_weights : ndarray, shape (N,)
        Natural logs of the unnormalised weights.  Entries may be ``-inf``
        (a particle with zero weight) but not ``nan`` or ``+inf``, and at
        least one entry must be finite.
    step_index : int
        Iteration counter of the population.
    """

    positions: np.ndarray
    log_weights: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        log_weights = np.asarray(self.log_weights, dtype=float).ravel()
        if positions.shape[0] != log_weights.shape[0]:
            raise ValueError(
                f"positions ({positions.shape[0]} rows) and log_weights "
                f"({log_weights.shape[0]}) disagree"
            )
        if positions.shape[0] < 1:
            raise ValueError("need at least one particle")
        if not np.all(np.isfinite(positions)):
            raise ValueError("particle positions must be finite")
        if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
            raise ValueError("log-weights must be finite or -inf")
        if self.step_index < 0:
            raise ValueError("step_index must be non-negative")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "log_weights", log_weights)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def recentered(self) -> "ParticleSystem":
        """Return a copy whose maximum log-weight is exactly zero."""
        if np.all(np.isneginf(self.log_weights)):
            raise DegenerateWeightsError("all log-weights are -inf")
        return replace(self, log_weights=self.log_weights - np.max(self.log_weights))

    def normalized_weights(self) -> np.ndarray:
        return normalize_weights(self.log_weights)


def normalize_weights(log_weights: np.ndarray) -> np.ndarray:
    """Normalise log-weights into a probability vector.

    Subtracts the maximum before exponentiating, so the result is invariant
    (to rounding) under adding any constant to all entries.

    Raises
    ------
    DegenerateWeightsError
        If every entry is ``-inf``.
    """
    lw = np.asarray(log_weights, dtype=float).ravel()
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log-weights must be finite or -inf")
    m = np.max(lw)
    if np.isneginf(m):
        raise DegenerateWeightsError("all log-weights are -inf")
    w = np.exp(lw - m)
    return w / np.sum(w)


def ess(weights: np.ndarray) -> float:
    """Effective sample size ``1 / sum(w_i^2)`` of normalised weights.

    Lies in ``[1, N]``; equals ``N`` exactly when the weights are uniform
    and ``1`` when a single particle carries all the mass.
    """
    w = np.asarray(weights, dtype=float).ravel()
    return 1.0 / float(np.sum(w * w))


def resample(system: ParticleSystem, rng: np.random.Generator) -> ParticleSystem:
    """Draw N offspring categorically by weight and reset weights to uniform.

    Offspring positions are copies of their ancestors; the expected offspring
    count of particle ``i`` is ``N * w_i``.  Indices come from ``rng`` (raw
    categorical draws) so the operation is reproducible given the stream.
    """
    w = system.normalized_weights()
    n = system.n_particles
    ancestors = rng.choice(n, size=n, replace=True, p=w)
    return ParticleSystem(
        positions=system.positions[ancestors].copy(),
        log_weights=np.zeros(n),
        step_index=system.step_index,
    )


def weighted_mean(system: ParticleSystem, phi) -> np.ndarray:
    """Self-normalised estimate ``sum_i w_i phi(X_i)``.

    ``phi`` maps the ``(N, d)`` position array to per-particle values of
    shape ``(N,)`` or ``(N, m)``.

    Raises
    ------
    NonFiniteValueError
        If ``phi`` evaluates non-finite on some particle; the first offending
        row index is attached to the error.
    """
    w = system.normalized_weights()
    values = np.asarray(phi(system.positions), dtype=float)
    if values.shape[0] != system.n_particles:
        raise ValueError("phi must return one row per particle")
    bad = ~np.all(np.isfinite(values.reshape(system.n_particles, -1)), axis=1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise NonFiniteValueError(f"phi is non-finite at particle {idx}", index=idx)
    return w @ values if values.ndim > 1 else np.asarray(w @ values)
