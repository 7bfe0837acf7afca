"""
Shared pieces of the toy environments
"""

import math
from typing import Any

import numpy as np

from policy.errors import EnvFault

MAX_DELTA = 0.05


def clip_action(action: np.ndarray, limit: float = MAX_DELTA) -> np.ndarray:
    """Clamp each axis of a position delta to [-limit, limit]."""
    return np.clip(np.asarray(action, dtype=np.float64), -limit, limit)


def scale_to_limit(delta: np.ndarray, limit: float = MAX_DELTA) -> np.ndarray:
    """Shrink a delta uniformly so its largest axis is at most `limit`."""
    largest = float(np.max(np.abs(delta))) if delta.size else 0.0
    return delta if largest <= limit else delta * (limit / largest)


def wrap_angle(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    return (theta + math.pi) % (2 * math.pi) - math.pi


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


class Env:
    """
    Deterministic 2D task with a scripted expert.
    States are immutable values; step() is a pure function of (state, action).
    """

    name = "env"
    obs_dim = 0
    action_dim = 2

    def reset(self, rng: np.random.Generator) -> Any:
        raise NotImplementedError

    def step(self, state: Any, action: np.ndarray) -> Any:
        raise NotImplementedError

    def expert_action(self, state: Any) -> np.ndarray:
        raise NotImplementedError

    def state_vector(self, state: Any) -> np.ndarray:
        raise NotImplementedError

    def is_success(self, state: Any) -> bool:
        raise NotImplementedError

    def check_action(self, action) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.action_dim,):
            raise EnvFault(f"{self.name}: action shape {action.shape}, expected ({self.action_dim},)")
        if not np.all(np.isfinite(action)):
            raise EnvFault(f"{self.name}: non-finite action {action.tolist()}")
        return clip_action(action)
