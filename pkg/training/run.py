"""
One training run driven by a RunConfig: fit, checkpoint, resume
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from config.run_config import RunConfig
from envs import make_env
from policy.checkpoint import load_checkpoint, save_checkpoint
from policy.model import ModelConfig
from training.dataset import Episode
from training.trainer import ResumeState, TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)


def train_config(run_cfg: RunConfig) -> TrainConfig:
    return TrainConfig(sigma=run_cfg.sigma, batch_size=run_cfg.batch_size, epochs=run_cfg.epochs,
                       learning_rate=run_cfg.learning_rate, seed=run_cfg.seed,
                       val_fraction=run_cfg.val_fraction, precision=run_cfg.precision)


def model_config(run_cfg: RunConfig) -> ModelConfig:
    env = make_env(run_cfg.task)
    return run_cfg.model_config(env.action_dim, env.obs_dim)


def train_run(run_cfg: RunConfig, episodes: Sequence[Episode], checkpoint_path: Union[str, Path],
              metrics_path: Optional[Union[str, Path]] = None,
              resume_path: Optional[Union[str, Path]] = None) -> TrainResult:
    """
    Train per `run_cfg` and write the checkpoint (with optimizer state, so it
    can be resumed).

    Args:
        run_cfg: Validated run configuration
        episodes: Raw demonstration episodes
        checkpoint_path: Output checkpoint
        metrics_path: Optional epoch CSV
        resume_path: Checkpoint to continue from; its config echo must match
    """
    model_cfg = model_config(run_cfg)
    resume = None
    if resume_path is not None:
        ckpt = load_checkpoint(resume_path, expected_config=model_cfg.to_dict())
        resume = ResumeState(ckpt.params(np.dtype(run_cfg.precision)), ckpt.stats, ckpt.training_state())

    result = train(episodes, train_config(run_cfg), model_cfg, metrics_path=metrics_path, resume=resume)
    stats = result.norm_stats()
    stats["run"] = run_cfg.to_dict()
    save_checkpoint(checkpoint_path, result.params, model_cfg.to_dict(), stats, extra=result.training_state())
    if result.metrics:
        last = result.metrics[-1]
        logger.info(f"✅ Trained {run_cfg.task} to epoch {last.epoch}: loss={last.loss:.5f}")
    return result
