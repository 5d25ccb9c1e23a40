"""Reward functions for tuning.

The gated and multi-modal families take a centre/temperature configuration;
the functional forms are fixed, the constants (gate centre, temperature,
smoothing scale, mode centres) are artifact defaults and freely
configurable.  Gates use exact indicators; nothing is smoothed internally,
because the tuning gradients never need the reward's derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError

__all__ = [
    "HalfPlaneReward",
    "GatedGaussianReward",
    "SmoothGatedReward",
    "MultiModalReward",
    "reward_from_spec",
]

_HALF_PLANES = {
    # side: (coordinate index, comparison against zero)
    "left": (0, "lt"),
    "right": (0, "gt"),
    "lower": (1, "lt"),
    "upper": (1, "gt"),
}


@dataclass(frozen=True)
class HalfPlaneReward:
    """Indicator of an open half-plane: takes values in {0, 1}."""

    side: str = "lower"

    def __post_init__(self):
        if self.side not in _HALF_PLANES:
            raise ConfigurationError(f"unknown half-plane side {self.side!r}")

    @property
    def tag(self) -> str:
        return f"half-plane-{self.side}"

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        axis, op = _HALF_PLANES[self.side]
        coord = x[:, axis]
        return (coord < 0.0 if op == "lt" else coord > 0.0).astype(float)

    def indicator_region(self, points) -> np.ndarray:
        """Boolean mask of the rewarded region; used by quadrature oracles."""
        return self.evaluate(points) > 0.5


@dataclass(frozen=True)
class GatedGaussianReward:
    """Gaussian bump at ``center`` gated to zero on the half-plane ``x_1 < 0``."""

    center: tuple = (2.0, 2.0)
    tau: float = 1.0
    tag: str = field(default="hard-gated", init=False)

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        bump = np.exp(-np.sum((x - np.asarray(self.center)) ** 2, axis=1) / self.tau)
        return np.where(x[:, 0] >= 0.0, bump, 0.0)


@dataclass(frozen=True)
class SmoothGatedReward:
    """Same bump with the gate replaced by a sigmoid of scale ``lam``."""

    center: tuple = (2.0, 2.0)
    tau: float = 1.0
    lam: float = 0.1
    tag: str = field(default="smooth-gated", init=False)

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        bump = np.exp(-np.sum((x - np.asarray(self.center)) ** 2, axis=1) / self.tau)
        return expit(x[:, 0] / self.lam) * bump


@dataclass(frozen=True)
class MultiModalReward:
    """Maximum over Gaussian bumps at several mode centres."""

    centers: tuple = ((-2.0, 2.0), (2.0, 2.0), (2.0, -2.0))
    tau: float = 1.0
    tag: str = field(default="multi-modal", init=False)

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        centers = np.asarray(self.centers, dtype=float)
        sq = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        return np.max(np.exp(-sq / self.tau), axis=1)


def reward_from_spec(name: str, **params):
    """Build a reward from a config name: a half-plane side or a family name."""
    name = name.strip().lower()
    if name in _HALF_PLANES:
        return HalfPlaneReward(side=name)
    if name == "hard":
        return GatedGaussianReward(**params)
    if name == "smooth":
        return SmoothGatedReward(**params)
    if name == "multi":
        return MultiModalReward(**params)
    raise ConfigurationError(f"unknown reward {name!r}")
