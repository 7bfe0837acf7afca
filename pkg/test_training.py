#!/usr/bin/env python3
"""
Test script for demo windows, normalization, the denoising objective and the training loop
"""

import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config.run_config import RunConfig
from envs.demos import gen_demos
from harness.verify import tiny_config
from policy.errors import ConfigError, RangeError
from policy.geometry import PolicyGeometry
from policy.model import init_params
from policy.normalizer import MinMaxNormalizer
from policy.schedule import make_schedule
from training.dataset import (
    Episode,
    read_episodes,
    sample_window,
    split_episodes,
    window_starts,
    write_episodes,
)
from training.run import train_run
from training.trainer import (
    Adam,
    LossDraws,
    TrainConfig,
    cosine_lr,
    evaluate_loss,
    loss,
    perturb_history,
    train,
    train_step,
)


def _episode(n=10, obs_dim=3):
    steps = np.arange(n, dtype=np.float64)
    return Episode(np.stack([steps] * obs_dim, axis=1), np.stack([steps, -steps], axis=1), True)


def _tiny_run(**overrides) -> RunConfig:
    base = dict(task="reach2d", history_len=4, chunk=2, valid_len=2, target_len=4, d_model=16, n_heads=2,
                n_blocks=1, d_ff=32, num_steps=10, epochs=4, batch_size=16, learning_rate=3e-3,
                val_fraction=0.2, seed=0)
    base.update(overrides)
    return RunConfig(**base).validate()


def test_windows_pad_history_before_start():
    print("🧪 Testing training windows")
    episode = _episode()
    geom = PolicyGeometry(4, 4, 2, 2)
    assert list(window_starts(episode, geom)) == list(range(-4, 3))
    sample = sample_window(episode, -4, geom, np.random.default_rng(0))
    np.testing.assert_array_equal(sample.history, np.zeros((4, 2)))
    np.testing.assert_array_equal(sample.targets[:, 0], [0, 1, 2, 3])
    np.testing.assert_array_equal(sample.obs, [0, 0, 0])
    assert 0 <= sample.offset < 4 * geom.total_len

    late = sample_window(episode, 2, geom, np.random.default_rng(0))
    np.testing.assert_array_equal(late.history[:, 0], [2, 3, 4, 5])
    np.testing.assert_array_equal(late.obs, [6, 6, 6])
    with pytest.raises(RangeError):
        sample_window(episode, 3, geom, np.random.default_rng(0))


def test_episode_json_round_trip():
    episodes = [_episode(5), _episode(7)]
    with tempfile.TemporaryDirectory() as tmp:
        path = write_episodes(Path(tmp) / "demos.jsonl", episodes)
        again = read_episodes(path)
    assert len(again) == 2
    np.testing.assert_array_equal(again[1].actions, episodes[1].actions)


def test_normalizer_maps_to_unit_range():
    print("🧪 Testing min-max normalization")
    data = np.array([[0.0, 5.0, 1.0], [2.0, 7.0, 1.0], [1.0, 6.0, 1.0]])
    norm = MinMaxNormalizer.fit([data])
    scaled = norm.normalize(data)
    np.testing.assert_allclose(scaled[:, :2].min(axis=0), -1.0)
    np.testing.assert_allclose(scaled[:, :2].max(axis=0), 1.0)
    # constant dimension maps to 0 and back
    np.testing.assert_array_equal(scaled[:, 2], 0.0)
    np.testing.assert_allclose(norm.denormalize(scaled), data)
    again = MinMaxNormalizer.from_dict(norm.to_dict())
    np.testing.assert_array_equal(again.low, norm.low)


def test_split_keeps_one_training_episode():
    episodes = [_episode(5) for _ in range(3)]
    train_eps, val_eps = split_episodes(episodes, 0.9, np.random.default_rng(0))
    assert len(train_eps) == 1 and len(val_eps) == 2


def test_perturb_history_range():
    history = np.zeros((4, 2))
    out = perturb_history(history, 1.0 / 6.0, np.random.default_rng(0))
    assert out.shape == history.shape and np.std(out) > 0
    base = np.ones((1000, 1000))
    drawn = perturb_history(base, 1.0 / 6.0, np.random.default_rng(1)) - base
    assert abs(np.std(drawn) - 1.0 / 6.0) < 0.01 / 6.0
    assert abs(np.mean(drawn)) < 1e-3
    for sigma in (0.0, 1.0, 6.0):
        with pytest.raises(ConfigError):
            perturb_history(history, sigma, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        TrainConfig(sigma=6.0)


def test_single_sample_loss_is_finite():
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(0), np.float64)
    sample = sample_window(_episode(12, obs_dim=cfg.obs_dim), 0, cfg.geometry, np.random.default_rng(1))
    value = loss(params, sample, make_schedule(cfg.num_steps), np.random.default_rng(2), cfg)
    assert value.data.size == 1 and np.isfinite(value.item())


def test_memorizes_constant_targets():
    """A single repeated window with constant targets is fit to a tenth of its starting loss."""
    print("🧪 Testing memorization of one window")
    cfg = tiny_config(history_len=2, chunk=2, target_len=2, n_blocks=1)
    params = init_params(cfg, np.random.default_rng(0), np.float64)
    trainable = params.trainable()
    for t in trainable.values():
        t.requires_grad = True
    optimizer = Adam(trainable)
    sched = make_schedule(cfg.num_steps)
    batch = (np.zeros((1, 2, 2)), np.full((1, 2, 2), 0.5), np.zeros((1, cfg.obs_dim)), np.zeros(1, dtype=np.int64))
    rng = np.random.default_rng(1)
    losses = []
    for _ in range(200):
        draws = LossDraws.draw(1, cfg.geometry, 2, sched.num_steps, rng)
        losses.append(train_step(params, optimizer, batch, draws, sched, cfg, 1.0 / 6.0, 1e-2))
    print(f"📊 Loss {losses[0]:.4f} -> {np.mean(losses[-10:]):.6f}")
    assert np.mean(losses[-10:]) <= 0.1 * losses[0]


def test_cosine_lr():
    assert cosine_lr(1.0, 0, 100) == 1.0
    assert abs(cosine_lr(1.0, 50, 100) - 0.5) < 1e-12
    assert abs(cosine_lr(1.0, 100, 100)) < 1e-12


def test_train_reach2d_decreases_loss_and_is_deterministic():
    print("🧪 Testing a small reach2d training run")
    run_cfg = _tiny_run()
    demos = gen_demos("reach2d", 6, seed=0, min_length=run_cfg.target_len)
    model_cfg = run_cfg.model_config(2, 4)
    train_cfg = TrainConfig(sigma=run_cfg.sigma, batch_size=16, epochs=4, learning_rate=3e-3, seed=0,
                            val_fraction=0.2)
    first = train(demos, train_cfg, model_cfg)
    second = train(demos, train_cfg, model_cfg)
    losses = [m.loss for m in first.metrics]
    print(f"📊 Epoch losses: {[round(x, 4) for x in losses]}")
    assert len(first.metrics) == 4
    assert losses[-1] < losses[0]
    assert losses == [m.loss for m in second.metrics]
    assert all(np.isfinite(m.val_loss) for m in first.metrics)


def test_train_requires_long_enough_episodes():
    model_cfg = tiny_config(history_len=2, chunk=2, target_len=4)
    short = [Episode(np.zeros((3, model_cfg.obs_dim)), np.zeros((3, 2)), True)]
    with pytest.raises(ConfigError):
        train(short, TrainConfig(epochs=1, val_fraction=0.0), model_cfg)
    with pytest.raises(ConfigError):
        train([], TrainConfig(epochs=1), model_cfg)


def test_evaluate_loss_without_windows_is_nan():
    cfg = tiny_config()
    params = init_params(cfg, np.random.default_rng(0), np.float64)
    assert np.isnan(evaluate_loss(params, [], cfg, make_schedule(cfg.num_steps), 0.1, 0, 4))


def test_resume_continues_from_checkpoint():
    print("🧪 Testing resume from a checkpoint")
    demos = gen_demos("reach2d", 6, seed=1, min_length=4)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        first = train_run(_tiny_run(epochs=2), demos, tmp / "a.ckpt", metrics_path=tmp / "a.csv")
        resumed = train_run(_tiny_run(epochs=4), demos, tmp / "b.ckpt", metrics_path=tmp / "a.csv",
                            resume_path=tmp / "a.ckpt")
        again = train_run(_tiny_run(epochs=4), demos, tmp / "c.ckpt", resume_path=tmp / "a.ckpt")
        rows = (tmp / "a.csv").read_text().strip().splitlines()
    assert [m.epoch for m in resumed.metrics] == [3, 4]
    assert resumed.step == 2 * first.step
    assert [m.loss for m in resumed.metrics] == [m.loss for m in again.metrics]
    assert rows[0] == "epoch,loss,val_loss" and len(rows) == 5


def main():
    """Run all training tests."""
    print("🚀 Training tests")
    print("=" * 60)
    tests = [
        test_windows_pad_history_before_start,
        test_episode_json_round_trip,
        test_normalizer_maps_to_unit_range,
        test_split_keeps_one_training_episode,
        test_perturb_history_range,
        test_single_sample_loss_is_finite,
        test_memorizes_constant_targets,
        test_cosine_lr,
        test_train_reach2d_decreases_loss_and_is_deterministic,
        test_train_requires_long_enough_episodes,
        test_evaluate_loss_without_windows_is_nan,
        test_resume_continues_from_checkpoint,
    ]
    for test in tests:
        test()
        print(f"✅ {test.__name__}")
    print("🏁 All training tests passed")


if __name__ == "__main__":
    main()
