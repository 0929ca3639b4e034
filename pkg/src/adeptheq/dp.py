"""Laplace privatization of validation accuracies and the multi-round accountant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

# stream tags keep RNG streams of different purposes disjoint
STREAM_DP = 1
STREAM_HE = 2
STREAM_TRAIN = 3
STREAM_SELECT = 4
STREAM_INIT = 5
STREAM_PARTITION = 6
STREAM_SPLIT = 7
STREAM_DATA = 8


def stream_rng(run_seed: int, tag: int, *key: int) -> np.random.Generator:
    """Independent counter-based (Philox) stream for ``(run_seed, tag, *key)``."""
    ss = np.random.SeedSequence(entropy=int(run_seed), spawn_key=(int(tag), *map(int, key)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PrivacySpec:
    epsilon_per_round: float = 1.0
    delta: float = 1e-5
    rounds_T: int = 20

    def __post_init__(self):
        if not self.epsilon_per_round > 0:
            raise ConfigurationError(f"epsilon_per_round must be > 0, got {self.epsilon_per_round}")
        if not 0 < self.delta < 1:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.rounds_T < 1:
            raise ConfigurationError(f"rounds_T must be positive, got {self.rounds_T}")


@dataclass(frozen=True)
class PrivatizedAccuracy:
    value: float
    sensitivity: float
    client_id: int
    round: int


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Inverse-CDF Laplace draw: ``-scale * sign(u) * ln(1 - 2|u|)``, ``u ~ U(-1/2, 1/2)``."""
    if not scale > 0:
        raise InputError(f"Laplace scale must be positive, got {scale}")
    u = rng.random(size) - 0.5
    # u == -0.5 would give ln(0); the open interval excludes it
    u = np.where(u == -0.5, 0.0, u)
    out = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(out) if size is None else out


def privatize_accuracy(a: float, m: int, epsilon: float, rng: np.random.Generator,
                       client_id: int = -1, round: int = -1) -> PrivatizedAccuracy:
    """Release ``clip(a + Lap(1/(m*epsilon)), 0, 1)``."""
    if not 0.0 <= a <= 1.0:
        raise InputError(f"accuracy must be in [0, 1], got {a}")
    if m < 1:
        raise InputError(f"validation size must be >= 1, got {m}")
    if not epsilon > 0:
        raise InputError(f"epsilon must be positive, got {epsilon}")
    sensitivity = 1.0 / m
    noisy = a + laplace_sample(sensitivity / epsilon, rng)
    return PrivatizedAccuracy(max(0.0, min(1.0, noisy)), sensitivity, client_id, round)


def compose_privacy(spec: PrivacySpec) -> float:
    """Advanced-composition total: ``sqrt(2 T ln(1/delta)) eps + T eps (e^eps - 1)``."""
    eps, T = spec.epsilon_per_round, spec.rounds_T
    try:
        return math.sqrt(2 * T * math.log(1 / spec.delta)) * eps + T * eps * math.expm1(eps)
    except OverflowError:
        return math.inf
