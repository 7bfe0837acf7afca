"""
Observation degradation: additive gaussian noise then per-element dropout
"""

from dataclasses import dataclass

import numpy as np

from policy.errors import ConfigError


@dataclass(frozen=True)
class DegradeSpec:
    noise_scale: float = 0.0
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ConfigError(f"must be >= 0, got {self.noise_scale}", "noise_scale")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError(f"must lie in [0, 1), got {self.dropout_prob}", "dropout_prob")


CLEAN = DegradeSpec()


def degrade(vector: np.ndarray, spec: DegradeSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Corrupt an observation vector.
    Both draws are taken on every call so a stream stays aligned across specs.
    """
    vector = np.asarray(vector, dtype=np.float64)
    noise = rng.standard_normal(vector.shape)
    keep = rng.random(vector.shape) >= spec.dropout_prob
    return np.where(keep, vector + spec.noise_scale * noise, 0.0)


def observe(env, state, spec: DegradeSpec, rng: np.random.Generator) -> np.ndarray:
    """Flattened state of `env` passed through `degrade`."""
    return degrade(env.state_vector(state), spec, rng)
