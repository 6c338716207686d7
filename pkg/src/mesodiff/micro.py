"""Agent-level decision functions.

An agent sees the binary choices ``o`` of the others through a weight vector
``w`` (its social signal ``s = o·w``) and maps that signal to an option.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class DecisionModel:
    weights: tuple[float, ...]
    s_star: float
    preference: float = 0.0
    # monotone map [0, b] -> [0, 1]; None means the hard threshold at s_star
    response: Callable[[float], float] | None = None

    def __post_init__(self):
        if any(w < 0 or not np.isfinite(w) for w in self.weights):
            raise ValueError("weights must be finite and non-negative")

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    @classmethod
    def binary_expansion(cls, n: int, s_star: float, preference: float = 0.0):
        """Weights 2^0..2^(n-1), which make the signal injective on {0,1}^n."""
        return cls(tuple(float(2**j) for j in range(n)), s_star, preference)

    def adoption_probability(self, s: float) -> float:
        if self.response is None:
            return 1.0 if s >= self.s_star else 0.0
        p = float(self.response(s))
        if not 0.0 <= p <= 1.0:
            raise ValueError("response must map into [0, 1]")
        return p


def social_signal(choices, weights) -> float:
    o = np.asarray(choices, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if o.shape != w.shape:
        raise ValueError(f"dimension mismatch: {o.shape} vs {w.shape}")
    return float(o @ w)


def threshold_decide(s: float, model: DecisionModel) -> int:
    """Option 1 iff ``s >= s_star``."""
    return int(s >= model.s_star)


def expected_utility_decide(p1: float, utilities) -> int:
    """argmax_o Σ_w P(w) u(o, w) with ``utilities[o][w]``; ties go to option 1.

    ``p1`` is the posterior probability of world ``w1``.
    """
    if not 0.0 <= p1 <= 1.0:
        raise ValueError("p1 must be a probability")
    u = np.asarray(utilities, dtype=np.float64)
    if u.shape != (2, 2):
        raise ValueError("utilities must be a 2x2 table u[option][world]")
    eu0 = (1.0 - p1) * u[0, 0] + p1 * u[0, 1]
    eu1 = (1.0 - p1) * u[1, 0] + p1 * u[1, 1]
    return int(eu1 >= eu0)


def decide(choices, model: DecisionModel, rng: np.random.Generator | None = None) -> int:
    """Full micro step: signal from ``choices``, then the model's response.

    With the default hard threshold no randomness is used.
    """
    s = social_signal(choices, model.weights)
    if model.response is None:
        return threshold_decide(s, model)
    if rng is None:
        raise ValueError("a probabilistic response needs an rng")
    return int(rng.random() < model.adoption_probability(s))
