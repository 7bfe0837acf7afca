"""
Closed-loop episode runner and the policies it drives
"""

import csv
import time
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from envs.base import Env
from envs.degrade import CLEAN, DegradeSpec, observe
from policy.errors import EnvFault
from policy.model import ModelConfig, ModelParams
from policy.normalizer import MinMaxNormalizer
from rollout.session import RolloutSession, StepTiming, ar_step, init_session
from training.dataset import Episode

logger = logging.getLogger(__name__)

TIMING_HEADER = ["ar_step", "kv_extract_ms", "denoise_ms", "cache_len"]


class ExpertPolicy:
    """The environment's scripted expert, one action per call; ignores the observation."""

    name = "expert"

    def __init__(self, env: Env):
        self.env = env
        self.timings: List[StepTiming] = []

    def reset(self, rng: np.random.Generator):
        self.timings = []

    def act(self, obs: np.ndarray, state) -> np.ndarray:
        return self.env.expert_action(state)[None, :]


class DiffusionPolicy:
    """
    Trained model behind an AR session; observations and actions cross the
    normalizer on the way in and out.
    """

    name = "diffusion"

    def __init__(self, params: ModelParams, cfg: ModelConfig, act_norm: MinMaxNormalizer,
                 obs_norm: MinMaxNormalizer, use_cache: bool = True, stochastic: bool = False,
                 stride: int = 1):
        self.params = params
        self.cfg = cfg
        self.act_norm = act_norm
        self.obs_norm = obs_norm
        self.use_cache = use_cache
        self.stochastic = stochastic
        self.stride = stride
        self.session: Optional[RolloutSession] = None

    @property
    def timings(self) -> List[StepTiming]:
        return self.session.timings if self.session is not None else []

    def reset(self, rng: np.random.Generator):
        self.session = init_session(self.cfg, rng=rng, use_cache=self.use_cache, stochastic=self.stochastic,
                                    stride=self.stride, dtype=self.params.dtype)

    def act(self, obs: np.ndarray, state) -> np.ndarray:
        actions = ar_step(self.session, self.obs_norm.normalize(obs), self.params)
        return self.act_norm.denormalize(actions.astype(np.float64))


@dataclass
class EpisodeResult:
    episode: Episode
    success: bool
    steps: int
    timings: List[StepTiming] = field(default_factory=list)


def run_episode(env: Env, policy, max_steps: int, degrade: DegradeSpec = CLEAN,
                rng: Optional[np.random.Generator] = None,
                policy_rng: Optional[np.random.Generator] = None) -> EpisodeResult:
    """
    Alternate observation -> policy chunk -> env ticks until success or max_steps.

    Args:
        env: Environment instance owned by this rollout
        policy: ExpertPolicy / DiffusionPolicy (anything with reset/act/timings)
        max_steps: Env tick budget
        degrade: Observation corruption
        rng: Drives the reset and the observation corruption
        policy_rng: Drives the policy's sampling noise

    Returns:
        EpisodeResult with the logged (observation, action) pairs and per-AR-step timings
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    policy.reset(policy_rng if policy_rng is not None else np.random.default_rng(1))
    state = env.reset(rng)
    observations, actions, env_times = [], [], []
    success = env.is_success(state)
    steps = 0

    while not success and steps < max_steps:
        obs = observe(env, state, degrade, rng)
        chunk = policy.act(obs, state)
        env_start = time.perf_counter()
        for action in chunk:
            if steps >= max_steps:
                break
            try:
                state = env.step(state, action)
            except EnvFault as e:
                raise EnvFault(str(e), step=steps) from e
            observations.append(obs)
            actions.append(action)
            steps += 1
            if env.is_success(state):
                success = True
                break
        env_times.append((time.perf_counter() - env_start) * 1000.0)

    timings = list(policy.timings)
    for timing, env_ms in zip(timings, env_times):
        timing.env_ms = env_ms
    episode = Episode(np.array(observations).reshape(-1, env.obs_dim),
                      np.array(actions).reshape(-1, env.action_dim), success)
    return EpisodeResult(episode, success, steps, timings)


def write_timing_csv(path: Union[str, Path], timings: Sequence[StepTiming]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TIMING_HEADER)
        for t in timings:
            writer.writerow([t.ar_step, f"{t.kv_extract_ms:.4f}", f"{t.denoise_ms:.4f}", t.cache_len])
    return path
