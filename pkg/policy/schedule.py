"""
Noise schedule
Forward noising and x0-parameterized reverse steps for the action diffusion.
"""

import math
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from policy.errors import ConfigError, ContractError, RangeError, ShapeError

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("linear", "cosine")
COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    beta_min: float
    beta_max: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return int(self.betas.shape[0])

    def to_dict(self) -> dict:
        return {"num_steps": self.num_steps, "kind": self.kind,
                "beta_min": self.beta_min, "beta_max": self.beta_max}


def cosine_alpha_bar(t: float, num_steps: int) -> float:
    """Squared-cosine cumulative signal level at continuous step t."""
    return math.cos((t / num_steps + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2


def make_schedule(num_steps: int, kind: str = "cosine",
                  beta_min: float = 1e-4, beta_max: float = 0.999) -> NoiseSchedule:
    """
    Build a schedule.

    Args:
        num_steps: T, at least 2
        kind: "linear" (betas evenly spaced from beta_min to beta_max) or
              "cosine" (squared-cosine alpha-bar, betas clipped into [beta_min, beta_max])
        beta_min, beta_max: 0 < beta_min < beta_max < 1

    Returns:
        Immutable NoiseSchedule
    """
    if num_steps < 2:
        raise ConfigError(f"needs at least 2 steps, got {num_steps}", "num_steps")
    if not 0.0 < beta_min < beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min < beta_max < 1, got {beta_min}..{beta_max}", "beta_min")
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}", "schedule_kind")

    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, num_steps, dtype=np.float64)
    else:
        ratios = np.array([cosine_alpha_bar(t + 1, num_steps) / cosine_alpha_bar(t, num_steps)
                           for t in range(num_steps)])
        betas = np.clip(1.0 - ratios, beta_min, beta_max)

    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(kind, float(beta_min), float(beta_max), betas, alphas, alpha_bars)


def schedule_from_dict(cfg: dict) -> NoiseSchedule:
    return make_schedule(int(cfg["num_steps"]), cfg["kind"], float(cfg["beta_min"]), float(cfg["beta_max"]))


def _check_step(t: int, sched: NoiseSchedule):
    if not 0 <= t < sched.num_steps:
        raise RangeError(f"timestep {t} outside [0, {sched.num_steps})")


def q_sample(x0: np.ndarray, t: int, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise"""
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if noise.shape != x0.shape:
        raise ShapeError(f"q_sample: noise {noise.shape} vs x0 {x0.shape}")
    _check_step(t, sched)
    abar = sched.alpha_bars[t]
    return (math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * noise).astype(x0.dtype, copy=False)


def q_sample_batch(x0: np.ndarray, t: np.ndarray, noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """q_sample with one timestep per leading-axis sample."""
    t = np.asarray(t, dtype=np.int64)
    if t.min() < 0 or t.max() >= sched.num_steps:
        raise RangeError(f"timesteps outside [0, {sched.num_steps})")
    abar = sched.alpha_bars[t].reshape((-1,) + (1,) * (x0.ndim - 1))
    return (np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise).astype(x0.dtype, copy=False)


def denoise_step_x0(x_t: np.ndarray, x0_pred: np.ndarray, t: int, sched: NoiseSchedule,
                    noise: Optional[np.ndarray] = None, stochastic: bool = False,
                    prev_t: Optional[int] = None) -> np.ndarray:
    """
    One reverse step with the clean-signal prediction substituted into the
    DDPM posterior q(x_prev | x_t, x0).

    Args:
        x_t: Current noisy sample
        x0_pred: Network prediction of the clean sample
        t: Current timestep
        sched: Noise schedule
        noise: Standard normal draw, required when stochastic and t > 0
        stochastic: Add posterior-variance noise
        prev_t: Target timestep (t - 1 unless running on a stride)

    Returns:
        x_prev; exactly x0_pred when t == 0
    """
    x_t = np.asarray(x_t)
    x0_pred = np.asarray(x0_pred)
    if x_t.shape != x0_pred.shape:
        raise ShapeError(f"denoise_step_x0: x_t {x_t.shape} vs x0_pred {x0_pred.shape}")
    _check_step(t, sched)
    if t == 0:
        return x0_pred.copy()
    if stochastic and noise is None:
        raise ContractError(f"stochastic reverse step at t={t} needs a noise draw")

    prev = t - 1 if prev_t is None else prev_t
    if not 0 <= prev < t:
        raise RangeError(f"previous timestep {prev} must lie in [0, {t})")
    abar_t = sched.alpha_bars[t]
    abar_prev = sched.alpha_bars[prev]
    alpha_eff = abar_t / abar_prev
    beta_eff = 1.0 - alpha_eff

    coef_x0 = math.sqrt(abar_prev) * beta_eff / (1.0 - abar_t)
    coef_xt = math.sqrt(alpha_eff) * (1.0 - abar_prev) / (1.0 - abar_t)
    mean = coef_x0 * x0_pred + coef_xt * x_t
    if stochastic:
        variance = (1.0 - abar_prev) / (1.0 - abar_t) * beta_eff
        mean = mean + math.sqrt(variance) * np.asarray(noise)
    return mean.astype(x_t.dtype, copy=False)


def inference_timesteps(sched: NoiseSchedule, stride: int = 1) -> List[int]:
    """Descending timesteps T-1, T-1-stride, ... always ending at 0."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}", "inference_stride")
    steps = list(range(sched.num_steps - 1, -1, -stride))
    if steps[-1] != 0:
        steps.append(0)
    return steps
