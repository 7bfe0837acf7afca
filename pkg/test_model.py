#!/usr/bin/env python3
"""
Test script for the denoising transformer: shapes, embeddings, causality and gradients
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from harness.verify import (
    check_causality,
    check_chunk_isolation,
    check_kv_timestep_invariance,
    check_model_gradients,
    random_params,
    tiny_config,
)
from numkernel import Tensor
from policy.errors import ConfigError, RangeError, ShapeError
from policy.model import (
    ModelConfig,
    embed_actions,
    encode_observation,
    forward,
    init_params,
    temporal_indices,
    timestep_embedding,
    vaca_forward,
)
from rollout.session import ar_step, init_session


def _inputs(cfg, rng, batch=None):
    lead = () if batch is None else (batch,)
    geom = cfg.geometry
    return (rng.normal(size=lead + (geom.history_len, cfg.action_dim)),
            rng.normal(size=lead + (geom.target_len, cfg.action_dim)),
            rng.normal(size=lead + (cfg.obs_dim,)))


def test_param_layout():
    print("🧪 Testing parameter layout")
    cfg = tiny_config(n_blocks=2)
    params = init_params(cfg, np.random.default_rng(0))
    assert "timestep_table" in params and "timestep_table" not in params.trainable()
    assert params["blocks.1.cta.qkv.weight"].shape == (16, 48)
    assert params["temporal_embed"].shape == (cfg.temporal_period, 16)
    assert params.dtype == np.float32


def test_config_validation_and_round_trip():
    cfg = tiny_config()
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ConfigError):
        tiny_config(d_model=15, n_heads=2)
    with pytest.raises(ConfigError):
        ModelConfig(2, 3, 16, 2, 1, 32, cfg.geometry, temporal_period=4)


def test_forward_shapes_and_batch_consistency():
    print("🧪 Testing forward shapes")
    cfg = tiny_config()
    rng = np.random.default_rng(1)
    params = random_params(cfg, rng)
    history, targets, obs = _inputs(cfg, rng, batch=3)
    t = np.array([0, 4, 9])
    offsets = np.array([0, 5, cfg.temporal_period - 1])
    batched = forward(history, targets, obs, t, offsets, params, cfg).data
    assert batched.shape == (3, cfg.geometry.target_len, cfg.action_dim)
    for i in range(3):
        single = forward(history[i], targets[i], obs[i], int(t[i]), int(offsets[i]), params, cfg).data
        np.testing.assert_allclose(single, batched[i], atol=1e-10)


def test_scalar_timestep_runs_forward_and_ar_step():
    print("🧪 Testing a scalar denoising step")
    cfg = tiny_config()
    rng = np.random.default_rng(9)
    params = random_params(cfg, rng)
    assert timestep_embedding(3, params).shape == (cfg.d_model,)
    assert timestep_embedding(np.array([1, 3]), params).shape == (2, cfg.d_model)
    np.testing.assert_allclose(timestep_embedding(3, params).data,
                               timestep_embedding(np.array([1, 3]), params).data[1], atol=1e-12)
    history, targets, obs = _inputs(cfg, rng)
    out = forward(history, targets, obs, 5, 0, params, cfg).data
    assert out.shape == (cfg.geometry.target_len, cfg.action_dim)
    executed = ar_step(init_session(cfg, rng=np.random.default_rng(0)), obs, params)
    assert executed.shape == (cfg.geometry.chunk, cfg.action_dim)
    assert np.all(np.isfinite(executed))


def test_timestep_changes_target_predictions():
    cfg = tiny_config()
    rng = np.random.default_rng(2)
    params = random_params(cfg, rng)
    history, targets, obs = _inputs(cfg, rng)
    a = forward(history, targets, obs, 0, 3, params, cfg).data
    b = forward(history, targets, obs, 7, 3, params, cfg).data
    assert np.max(np.abs(a - b)) > 1e-6


def test_timestep_only_shapes_vaca_queries():
    # one observation token: attention weights are 1 whatever the query, so t must not leak in
    cfg = tiny_config()
    rng = np.random.default_rng(10)
    params = random_params(cfg, rng)
    x = Tensor(rng.normal(size=(cfg.geometry.target_len, cfg.d_model)))
    obs_feat = encode_observation(rng.normal(size=cfg.obs_dim), params, cfg)
    plain = vaca_forward(x, obs_feat, None, params, 0, cfg).data
    for t in (0, 7):
        np.testing.assert_allclose(vaca_forward(x, obs_feat, t, params, 0, cfg).data, plain, atol=1e-12)


def test_offset_out_of_range():
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(3), np.float64)
    history, targets, obs = _inputs(cfg, np.random.default_rng(3))
    with pytest.raises(RangeError):
        forward(history, targets, obs, 0, cfg.temporal_period, params, cfg)
    with pytest.raises(ShapeError):
        forward(history[:1], targets, obs, 0, 0, params, cfg)


def test_temporal_index_wraps():
    """Position 1 at offset period-1 reuses temporal row 0."""
    print("🧪 Testing cyclic temporal indices")
    cfg = tiny_config()
    P = cfg.temporal_period
    assert temporal_indices(P - 1, np.arange(3), P).tolist() == [P - 1, 0, 1]
    params = random_params(cfg, np.random.default_rng(4))
    action = np.array([[0.1, -0.2]])
    wrapped = embed_actions(action, np.array([1]), P - 1, params, cfg).data
    direct = embed_actions(action, np.array([0]), 0, params, cfg).data
    np.testing.assert_array_equal(wrapped, direct)


def test_history_kv_independent_of_timestep():
    print("🧪 Testing history K/V timestep invariance")
    ok, detail = check_kv_timestep_invariance(np.random.default_rng(5))
    assert ok, detail


def test_targets_never_reach_history():
    ok, detail = check_causality(np.random.default_rng(6))
    assert ok, detail


def test_history_chunks_isolated():
    ok, detail = check_chunk_isolation(np.random.default_rng(7))
    assert ok, detail


def test_model_gradients():
    print("🧪 Testing model gradients (P=2, d_model=16)")
    ok, detail = check_model_gradients(np.random.default_rng(8), batches=1, max_entries=3)
    print(f"📊 {detail}")
    assert ok, detail


def test_no_history_and_multi_token_observation():
    cfg = tiny_config(history_len=0, chunk=2, target_len=4, n_obs_tokens=3)
    rng = np.random.default_rng(9)
    params = random_params(cfg, rng)
    history, targets, obs = _inputs(cfg, rng)
    out = forward(history, targets, obs, 2, 1, params, cfg).data
    assert out.shape == (4, 2) and np.all(np.isfinite(out))


def main():
    """Run all model tests."""
    print("🚀 Model tests")
    print("=" * 60)
    tests = [
        test_param_layout,
        test_config_validation_and_round_trip,
        test_forward_shapes_and_batch_consistency,
        test_scalar_timestep_runs_forward_and_ar_step,
        test_timestep_changes_target_predictions,
        test_timestep_only_shapes_vaca_queries,
        test_offset_out_of_range,
        test_temporal_index_wraps,
        test_history_kv_independent_of_timestep,
        test_targets_never_reach_history,
        test_history_chunks_isolated,
        test_model_gradients,
        test_no_history_and_multi_token_observation,
    ]
    for test in tests:
        test()
        print(f"✅ {test.__name__}")
    print("🏁 All model tests passed")


if __name__ == "__main__":
    main()
