"""
reach2d: move a point agent onto a goal in the unit square
"""

from dataclasses import dataclass

import numpy as np

from envs.base import MAX_DELTA, Env, scale_to_limit

SUCCESS_RADIUS = 0.03
# goals start at least this far (largest axis) from the agent
MIN_START_GAP = 0.6


@dataclass(frozen=True)
class Reach2DState:
    agent_pos: np.ndarray
    goal_pos: np.ndarray


class Reach2D(Env):
    name = "reach2d"
    obs_dim = 4
    action_dim = 2

    def reset(self, rng: np.random.Generator) -> Reach2DState:
        while True:
            agent = rng.uniform(0.05, 0.95, size=2)
            goal = rng.uniform(0.05, 0.95, size=2)
            if np.max(np.abs(goal - agent)) >= MIN_START_GAP:
                return Reach2DState(agent, goal)

    def step(self, state: Reach2DState, action) -> Reach2DState:
        delta = self.check_action(action)
        agent = np.clip(state.agent_pos + delta, 0.0, 1.0)
        return Reach2DState(agent, state.goal_pos)

    def expert_action(self, state: Reach2DState) -> np.ndarray:
        """Proportional step toward the goal, scaled so no axis exceeds MAX_DELTA."""
        return scale_to_limit(state.goal_pos - state.agent_pos, MAX_DELTA)

    def state_vector(self, state: Reach2DState) -> np.ndarray:
        return np.concatenate([state.agent_pos, state.goal_pos])

    def is_success(self, state: Reach2DState) -> bool:
        return bool(np.linalg.norm(state.agent_pos - state.goal_pos) < SUCCESS_RADIUS)
