"""
pusht_lite: push a square block into a target pose with a disc-shaped agent

Quasi-static contact: whenever the agent disc overlaps the block after a move,
the block translates by the penetration depth along the push direction and
turns by a torque proportional to the lever arm of the contact point.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from envs.base import MAX_DELTA, Env, rotation, scale_to_limit, wrap_angle

HALF_SIZE = 0.05
AGENT_RADIUS = 0.02
ROT_GAIN = 1.0
MAX_TURN = 0.2

POS_TOLERANCE = 0.05
ANGLE_TOLERANCE = math.radians(10.0)

# expert
ROTATE_THRESHOLD = math.radians(4.0)
TRANSLATE_THRESHOLD = 0.015
ALIGN_TOLERANCE = 0.003
SLIDE_WINDOW = 0.04
STANDOFF = 0.03
ORBIT_STEP = 0.3
ORBIT_RADIUS = math.sqrt(2.0) * (HALF_SIZE + AGENT_RADIUS) + STANDOFF

# block-frame outward face normals
FACES = (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([-1.0, 0.0]), np.array([0.0, -1.0]))


@dataclass(frozen=True)
class PushTState:
    agent_pos: np.ndarray
    block_pos: np.ndarray
    block_angle: float
    target_pose: np.ndarray  # x, y, angle


def _cross(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def contact(agent_local: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Closest block point, unit normal (block -> agent) and penetration depth for
    an agent centre given in the block frame. Depth <= 0 means no contact.
    """
    h = HALF_SIZE
    inside = np.all(np.abs(agent_local) <= h)
    if inside:
        axis = int(np.argmin(h - np.abs(agent_local)))
        normal = np.zeros(2)
        normal[axis] = 1.0 if agent_local[axis] >= 0 else -1.0
        point = agent_local.copy()
        point[axis] = normal[axis] * h
        return point, normal, AGENT_RADIUS + (h - abs(agent_local[axis]))
    point = np.clip(agent_local, -h, h)
    offset = agent_local - point
    dist = float(np.linalg.norm(offset))
    return point, offset / dist, AGENT_RADIUS - dist


class PushTLite(Env):
    name = "pusht_lite"
    obs_dim = 8
    action_dim = 2

    def reset(self, rng: np.random.Generator) -> PushTState:
        target_xy = rng.uniform(0.4, 0.6, size=2)
        target_angle = rng.uniform(-math.pi / 6, math.pi / 6)
        target = np.array([target_xy[0], target_xy[1], target_angle])
        while True:
            block = target_xy + rng.uniform(-0.15, 0.15, size=2)
            angle = wrap_angle(target_angle + rng.uniform(-math.pi / 4, math.pi / 4))
            agent = rng.uniform(0.05, 0.95, size=2)
            state = PushTState(agent, block, angle, target)
            if np.linalg.norm(agent - block) >= 0.2 and not self.is_success(state):
                return state

    def step(self, state: PushTState, action) -> PushTState:
        delta = self.check_action(action)
        agent = np.clip(state.agent_pos + delta, 0.0, 1.0)
        block, angle = state.block_pos, state.block_angle

        to_local = rotation(-angle)
        point, normal, depth = contact(to_local @ (agent - block))
        if depth > 0:
            push_dir = -normal
            turn = ROT_GAIN * _cross(point, push_dir) * depth / HALF_SIZE ** 2
            turn = float(np.clip(turn, -MAX_TURN, MAX_TURN))
            block = np.clip(block + rotation(angle) @ (push_dir * depth), HALF_SIZE, 1.0 - HALF_SIZE)
            angle = wrap_angle(angle + turn)
        return PushTState(agent, block, angle, state.target_pose)

    def state_vector(self, state: PushTState) -> np.ndarray:
        return np.concatenate([state.agent_pos, state.block_pos, [state.block_angle], state.target_pose])

    def pose_error(self, state: PushTState) -> Tuple[np.ndarray, float]:
        """World-frame position error and wrapped angle error, target minus block."""
        return (state.target_pose[:2] - state.block_pos,
                wrap_angle(state.target_pose[2] - state.block_angle))

    def is_success(self, state: PushTState) -> bool:
        pos_err, angle_err = self.pose_error(state)
        return bool(np.all(np.abs(pos_err) < POS_TOLERANCE) and abs(angle_err) < ANGLE_TOLERANCE)

    def expert_action(self, state: PushTState) -> np.ndarray:
        """
        Face-push controller.

        Large angle errors are fixed first by off-centre pushes on the face
        nearest the agent; then the block is pushed centre-on along any axis
        that is still off target, again preferring the nearest face.
        """
        pos_err, angle_err = self.pose_error(state)
        to_local = rotation(-state.block_angle)
        agent_local = to_local @ (state.agent_pos - state.block_pos)
        err_local = to_local @ pos_err

        if abs(angle_err) > ROTATE_THRESHOLD:
            face = max(FACES, key=lambda n: float(agent_local @ n))
            offset = math.copysign(0.6 * HALF_SIZE, angle_err)
            depth = float(np.clip(abs(angle_err) / 12.0, 0.001, 0.008))
        else:
            useful = [n for n in FACES if float(-n @ err_local) > TRANSLATE_THRESHOLD]
            if not useful:
                return np.zeros(2)
            face = max(useful, key=lambda n: float(agent_local @ n))
            offset = 0.0
            depth = float(np.clip(-face @ err_local, 0.001, 0.015))

        goal_local = self._face_waypoint(agent_local, face, offset, depth)
        delta = rotation(state.block_angle) @ (goal_local - agent_local)
        return scale_to_limit(delta, MAX_DELTA)

    @staticmethod
    def _face_waypoint(agent_local: np.ndarray, face: np.ndarray, offset: float,
                       depth: float) -> np.ndarray:
        """Next agent position (block frame) for pushing `face` at tangential `offset`."""
        tangent = np.array([-face[1], face[0]])
        u = float(agent_local @ face)
        w = float(agent_local @ tangent)
        touch = HALF_SIZE + AGENT_RADIUS
        near = u >= touch - 0.004

        if near and abs(w - offset) < ALIGN_TOLERANCE:
            goal_u = touch - depth if u <= touch + 0.001 else touch
            return goal_u * face + offset * tangent
        if near and abs(w - offset) < SLIDE_WINDOW:
            return max(u, touch + 0.002) * face + offset * tangent
        if u > touch + 0.008:
            return (touch + STANDOFF) * face + offset * tangent

        # orbit around the block toward the staging point
        staging = (touch + STANDOFF) * face + offset * tangent
        phi = math.atan2(agent_local[1], agent_local[0])
        phi_goal = math.atan2(staging[1], staging[0])
        phi_next = phi + float(np.clip(wrap_angle(phi_goal - phi), -ORBIT_STEP, ORBIT_STEP))
        return ORBIT_RADIUS * np.array([math.cos(phi_next), math.sin(phi_next)])
