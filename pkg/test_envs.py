#!/usr/bin/env python3
"""
Test script for the toy environments, observation degradation and demo generation
"""

import math
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from envs import make_env
from envs.base import MAX_DELTA, clip_action, scale_to_limit, wrap_angle
from envs.degrade import CLEAN, DegradeSpec, degrade
from envs.demos import gen_demos
from envs.pusht_lite import AGENT_RADIUS, HALF_SIZE, PushTLite, PushTState, contact
from envs.reach2d import MIN_START_GAP, Reach2DState
from policy.errors import ConfigError, EnvFault


def test_unknown_task():
    with pytest.raises(ConfigError):
        make_env("cartpole")


def test_action_helpers():
    np.testing.assert_array_equal(clip_action(np.array([1.0, -0.01])), [MAX_DELTA, -0.01])
    np.testing.assert_allclose(scale_to_limit(np.array([0.2, 0.1])), [0.05, 0.025])
    assert abs(wrap_angle(3 * math.pi / 2) + math.pi / 2) < 1e-12


def test_reach2d_step_and_success():
    print("🧪 Testing reach2d dynamics")
    env = make_env("reach2d")
    state = Reach2DState(np.array([0.5, 0.5]), np.array([0.52, 0.5]))
    assert env.is_success(state)
    moved = env.step(Reach2DState(np.array([0.99, 0.5]), np.array([0.1, 0.1])), np.array([1.0, 0.0]))
    np.testing.assert_allclose(moved.agent_pos, [1.0, 0.5])
    with pytest.raises(EnvFault):
        env.step(state, np.array([np.nan, 0.0]))
    with pytest.raises(EnvFault):
        env.step(state, np.zeros(3))


def test_reach2d_reset_gap():
    env = make_env("reach2d")
    rng = np.random.default_rng(0)
    for _ in range(20):
        state = env.reset(rng)
        assert np.max(np.abs(state.goal_pos - state.agent_pos)) >= MIN_START_GAP
        assert env.state_vector(state).shape == (4,)


def test_centre_push_translates_block():
    print("🧪 Testing pusht_lite contact")
    env = PushTLite()
    touch = HALF_SIZE + AGENT_RADIUS
    state = PushTState(np.array([0.5 - touch, 0.5]), np.array([0.5, 0.5]), 0.0, np.array([0.5, 0.5, 0.0]))
    after = env.step(state, np.array([0.01, 0.0]))
    np.testing.assert_allclose(after.block_pos, [0.51, 0.5], atol=1e-12)
    assert after.block_angle == 0.0


def test_off_centre_push_turns_block():
    env = PushTLite()
    touch = HALF_SIZE + AGENT_RADIUS
    state = PushTState(np.array([0.5 - touch, 0.53]), np.array([0.5, 0.5]), 0.0, np.array([0.5, 0.5, 0.0]))
    after = env.step(state, np.array([0.01, 0.0]))
    assert after.block_angle < 0.0
    assert after.block_pos[0] > 0.5


def test_no_contact_leaves_block():
    env = PushTLite()
    state = PushTState(np.array([0.2, 0.2]), np.array([0.5, 0.5]), 0.3, np.array([0.5, 0.5, 0.0]))
    after = env.step(state, np.array([0.05, 0.05]))
    np.testing.assert_array_equal(after.block_pos, state.block_pos)
    assert after.block_angle == state.block_angle


def test_contact_inside_block_pushes_out_of_nearest_face():
    point, normal, depth = contact(np.array([0.04, 0.01]))
    np.testing.assert_array_equal(normal, [1.0, 0.0])
    assert abs(depth - (AGENT_RADIUS + 0.01)) < 1e-12
    assert point[0] == HALF_SIZE


def test_pusht_success_tolerances():
    env = PushTLite()
    target = np.array([0.5, 0.5, 0.2])
    near = PushTState(np.zeros(2), np.array([0.54, 0.46]), 0.2 + math.radians(9), target)
    far = PushTState(np.zeros(2), np.array([0.56, 0.5]), 0.2, target)
    turned = PushTState(np.zeros(2), np.array([0.5, 0.5]), 0.2 + math.radians(11), target)
    assert env.is_success(near)
    assert not env.is_success(far)
    assert not env.is_success(turned)
    assert env.state_vector(near).shape == (8,)


def test_reach2d_expert_always_succeeds():
    print("🧪 Testing the reach2d scripted expert over 1000 seeds")
    env = make_env("reach2d")
    for seed in range(1000):
        state = env.reset(np.random.default_rng(seed))
        for _ in range(60):
            state = env.step(state, env.expert_action(state))
            if env.is_success(state):
                break
        assert env.is_success(state), seed


def test_pusht_expert_mostly_succeeds():
    print("🧪 Testing the pusht_lite scripted expert")
    env = PushTLite()
    successes = 0
    for seed in range(200):
        state = env.reset(np.random.default_rng(seed))
        for _ in range(300):
            state = env.step(state, env.expert_action(state))
            if env.is_success(state):
                successes += 1
                break
    print(f"📊 Expert success: {successes}/200")
    assert successes >= 190


def test_degrade():
    print("🧪 Testing observation degradation")
    rng = np.random.default_rng(0)
    vector = np.arange(1.0, 201.0)
    np.testing.assert_array_equal(degrade(vector, CLEAN, rng), vector)
    dropped = degrade(vector, DegradeSpec(0.0, 0.5), rng)
    assert 50 < np.sum(dropped == 0.0) < 150
    noisy = degrade(vector, DegradeSpec(0.1, 0.0), rng)
    assert 0.05 < np.std(noisy - vector) < 0.15
    zeros = np.zeros(100_000)
    assert abs(np.std(degrade(zeros, DegradeSpec(0.1, 0.0), rng)) - 0.1) < 0.001
    assert abs(np.mean(degrade(zeros + 1.0, DegradeSpec(0.0, 0.3), rng) == 0.0) - 0.3) < 0.01
    both = degrade(zeros + 1.0, DegradeSpec(0.2, 0.3), rng)
    kept = both[both != 0.0]
    assert abs(np.std(kept) - 0.2) < 0.002
    assert abs(1.0 - kept.size / zeros.size - 0.3) < 0.01
    with pytest.raises(ConfigError):
        DegradeSpec(-0.1, 0.0)
    with pytest.raises(ConfigError):
        DegradeSpec(0.0, 1.0)


def test_gen_demos_deterministic():
    print("🧪 Testing demo generation")
    first = gen_demos("reach2d", 4, seed=0, min_length=10)
    second = gen_demos("reach2d", 4, seed=0, min_length=10)
    assert len(first) == 4 and all(ep.success for ep in first)
    assert all(len(ep) >= 10 for ep in first)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.actions, b.actions)
    with pytest.raises(ConfigError):
        gen_demos("reach2d", 0, seed=0)


def main():
    """Run all environment tests."""
    print("🚀 Environment tests")
    print("=" * 60)
    tests = [
        test_unknown_task,
        test_action_helpers,
        test_reach2d_step_and_success,
        test_reach2d_reset_gap,
        test_centre_push_translates_block,
        test_off_centre_push_turns_block,
        test_no_contact_leaves_block,
        test_contact_inside_block_pushes_out_of_nearest_face,
        test_pusht_success_tolerances,
        test_reach2d_expert_always_succeeds,
        test_pusht_expert_mostly_succeeds,
        test_degrade,
        test_gen_demos_deterministic,
    ]
    for test in tests:
        test()
        print(f"✅ {test.__name__}")
    print("🏁 All environment tests passed")


if __name__ == "__main__":
    main()
