"""
Scripted-expert demonstrations
"""

import logging
from typing import List

import numpy as np

from config.seeding import stream_rng
from config.settings import RolloutSettings
from envs import make_env
from policy.errors import ConfigError, DemoGenerationError
from training.dataset import Episode

logger = logging.getLogger(__name__)

# attempts allowed per requested episode before giving up
ATTEMPTS_PER_EPISODE = 5


def expert_episode(env, rng: np.random.Generator, max_steps: int, min_length: int = 1) -> Episode:
    """
    Roll the expert from a fresh reset with clean observations.
    After success the expert keeps acting (holding still) until the episode
    reaches `min_length` steps.
    """
    state = env.reset(rng)
    observations, actions = [], []
    success = False
    for _ in range(max(max_steps, min_length)):
        if success and len(actions) >= min_length:
            break
        action = env.expert_action(state)
        observations.append(env.state_vector(state))
        actions.append(action)
        state = env.step(state, action)
        success = success or env.is_success(state)
    return Episode(np.array(observations), np.array(actions), success)


def gen_demos(env_name: str, n_episodes: int, seed: int, min_length: int = 1,
              max_steps: int = RolloutSettings.MAX_STEPS) -> List[Episode]:
    """
    Generate successful expert episodes.

    Args:
        env_name: Task name
        n_episodes: Number of successful episodes wanted
        seed: Master seed; episode i uses the "env" stream with index i
        min_length: Shortest allowed episode (pad with post-success expert steps)
        max_steps: Step budget per attempt

    Returns:
        Up to n_episodes episodes, all with success=True
    """
    if n_episodes < 1:
        raise ConfigError(f"must be >= 1, got {n_episodes}", "n")
    env = make_env(env_name)
    kept: List[Episode] = []
    attempts = 0
    while len(kept) < n_episodes and attempts < n_episodes * ATTEMPTS_PER_EPISODE:
        episode = expert_episode(env, stream_rng(seed, "env", attempts), max_steps, min_length)
        attempts += 1
        if episode.success:
            kept.append(episode)

    if not kept:
        raise DemoGenerationError(f"expert failed on all {attempts} attempts for {env_name}")
    if len(kept) < n_episodes:
        logger.warning(f"⚠️ Only {len(kept)}/{n_episodes} {env_name} demos succeeded")
    logger.info(f"✅ Generated {len(kept)} {env_name} demos in {attempts} attempts "
                f"(mean length {np.mean([len(e) for e in kept]):.1f})")
    return kept
