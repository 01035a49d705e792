"""Discrete symbol selection from confidence vectors.

The greedy policy takes the argmax (lowest index on ties); epsilon-greedy
mixes in a uniform random symbol with probability epsilon. Randomness
comes from numpy's PCG64 so draws are seedable and portable; each worker
should own its own stream.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Policy:
    kind: str = "epsilon_greedy"  # "greedy" | "epsilon_greedy"
    epsilon: float = 0.1
    decay_epochs: int = 0

    def __post_init__(self):
        if self.kind not in ("greedy", "epsilon_greedy"):
            raise ValueError(f"unknown policy kind: {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")

    def epsilon_at(self, epoch):
        """Linear decay to 0 over decay_epochs; constant when 0."""
        if self.kind == "greedy" or self.decay_epochs <= 0:
            return self.epsilon if self.kind == "epsilon_greedy" else 0.0
        frac = max(0.0, 1.0 - epoch / self.decay_epochs)
        return self.epsilon * frac


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Choice:
    symbol: int
    confidence: float
    explored: bool


def greedy_select(t):
    """Argmax choice with lowest-index tie-break."""
    t = np.asarray(t)
    if t.size == 0:
        raise ValueError("empty confidence vector")
    sym = int(t.argmax())
    return Choice(symbol=sym, confidence=float(t[sym]), explored=False)


def epsilon_greedy_select(t, epsilon, rng):
    """Greedy with probability 1-epsilon, uniform over all symbols otherwise."""
    t = np.asarray(t)
    if t.size == 0:
        raise ValueError("empty confidence vector")
    if epsilon > 0.0:
        if rng.random() < epsilon:
            sym = int(rng.integers(0, t.size))
            return Choice(symbol=sym, confidence=float(t[sym]), explored=True)
    return greedy_select(t)


def select_batch(probs, epsilon, rng):
    """Row-wise policy selection on a (B, K) matrix.

    Returns (symbols, explored) int/bool arrays. Draw order per call:
    B uniforms, then B integers (only consumed when epsilon > 0).
    """
    probs = np.asarray(probs)
    b, k = probs.shape
    greedy = probs.argmax(axis=1)
    if epsilon <= 0.0:
        return greedy, np.zeros(b, dtype=bool)
    explore = rng.random(b) < epsilon
    random_syms = rng.integers(0, k, size=b)
    return np.where(explore, random_syms, greedy), explore
