"""
Training loop
Denoising objective on target actions, conditioned on perturbed history,
optimized with Adam under a cosine learning-rate decay.
"""

import csv
import math
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.seeding import stream_rng
from config.settings import TrainingSettings
from numkernel import Tape, Tensor, backward, mse
from policy.errors import ConfigError, ShapeError
from policy.model import ModelConfig, ModelParams, forward, init_params
from policy.normalizer import MinMaxNormalizer
from policy.schedule import NoiseSchedule, q_sample_batch, schedule_from_dict
from training.dataset import (
    Episode,
    TrainingSample,
    sample_window,
    split_episodes,
    stack_samples,
    window_index,
)

logger = logging.getLogger(__name__)

Batch = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = TrainingSettings.SIGMA
    batch_size: int = TrainingSettings.BATCH_SIZE
    epochs: int = TrainingSettings.EPOCHS
    learning_rate: float = TrainingSettings.LEARNING_RATE
    seed: int = 0
    val_fraction: float = TrainingSettings.VAL_FRACTION
    precision: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ConfigError(f"must lie in (0, 1), got {self.sigma}", "sigma")
        if self.batch_size < 1:
            raise ConfigError(f"must be >= 1, got {self.batch_size}", "batch_size")
        if self.epochs < 1:
            raise ConfigError(f"must be >= 1, got {self.epochs}", "epochs")
        if self.learning_rate <= 0:
            raise ConfigError(f"must be > 0, got {self.learning_rate}", "learning_rate")


@dataclass
class LossDraws:
    """Random inputs of one loss evaluation, one row per batch sample."""

    t: np.ndarray              # [B]
    noise: np.ndarray          # [B, M, action_dim]
    history_noise: np.ndarray  # [B, L, action_dim], standard normal

    @classmethod
    def draw(cls, batch_size: int, geom, action_dim: int, num_steps: int,
             rng: np.random.Generator) -> "LossDraws":
        return cls(
            t=rng.integers(0, num_steps, size=batch_size),
            noise=rng.standard_normal((batch_size, geom.target_len, action_dim)),
            history_noise=rng.standard_normal((batch_size, geom.history_len, action_dim)),
        )


def perturb_history(history: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """history + N(0, sigma^2) per element"""
    if not 0.0 < sigma < 1.0:
        raise ConfigError(f"must lie in (0, 1), got {sigma}", "sigma")
    history = np.asarray(history)
    return history + sigma * rng.standard_normal(history.shape)


def loss_from_draws(params: ModelParams, batch: Batch, draws: LossDraws, sched: NoiseSchedule,
                    cfg: ModelConfig, sigma: float) -> Tensor:
    """Deterministic batch loss: MSE between predicted and true clean targets."""
    history, targets, obs, offsets = batch
    dtype = params.dtype
    if draws.noise.shape != targets.shape:
        raise ShapeError(f"noise {draws.noise.shape} vs targets {targets.shape}")
    perturbed = (history + sigma * draws.history_noise).astype(dtype)
    x_t = q_sample_batch(targets, draws.t, draws.noise, sched).astype(dtype)
    pred = forward(perturbed, x_t, obs.astype(dtype), draws.t, offsets, params, cfg)
    return mse(pred, targets.astype(dtype))


def loss(params: ModelParams, sample: TrainingSample, sched: NoiseSchedule, rng: np.random.Generator,
         cfg: ModelConfig, sigma: float = TrainingSettings.SIGMA) -> Tensor:
    """Single-sample objective with fresh t, target noise and history perturbation."""
    batch = stack_samples([sample])
    draws = LossDraws.draw(1, cfg.geometry, cfg.action_dim, sched.num_steps, rng)
    return loss_from_draws(params, batch, draws, sched, cfg, sigma)


class Adam:
    """Adam with bias correction; moments kept per trainable tensor."""

    def __init__(self, params: Dict[str, Tensor], beta1: float = TrainingSettings.ADAM_BETA1,
                 beta2: float = TrainingSettings.ADAM_BETA2, eps: float = TrainingSettings.ADAM_EPS):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m[:] = b1 * m + (1 - b1) * g
            v[:] = b2 * v + (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** self.step_count)
            v_hat = v / (1 - b2 ** self.step_count)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {"adam.step": np.array([self.step_count], dtype=np.float64)}
        for k in self.params:
            state[f"adam.m.{k}"] = self.m[k]
            state[f"adam.v.{k}"] = self.v[k]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.step_count = int(state["adam.step"][0])
        for k in self.params:
            self.m[k] = np.array(state[f"adam.m.{k}"], dtype=self.params[k].dtype)
            self.v[k] = np.array(state[f"adam.v.{k}"], dtype=self.params[k].dtype)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1 + math.cos(math.pi * min(step, total_steps) / max(total_steps, 1)))


def train_step(params: ModelParams, optimizer: Adam, batch: Batch, draws: LossDraws,
               sched: NoiseSchedule, cfg: ModelConfig, sigma: float, lr: float) -> float:
    """One forward/backward/update; returns the batch loss."""
    with Tape() as tape:
        value = loss_from_draws(params, batch, draws, sched, cfg, sigma)
    backward(tape, value)
    optimizer.step(lr)
    return value.item()


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    val_loss: float


@dataclass
class TrainResult:
    params: ModelParams
    act_norm: MinMaxNormalizer
    obs_norm: MinMaxNormalizer
    optimizer: Adam
    epoch: int
    step: int
    metrics: List[EpochMetrics] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)

    def norm_stats(self) -> dict:
        return {"action": self.act_norm.to_dict(), "obs": self.obs_norm.to_dict()}

    def training_state(self) -> Dict[str, np.ndarray]:
        state = {"epoch": np.array([self.epoch], dtype=np.float64),
                 "step": np.array([self.step], dtype=np.float64)}
        state.update(self.optimizer.state_dict())
        return state


@dataclass
class ResumeState:
    params: ModelParams
    stats: dict
    state: Dict[str, np.ndarray]


def _batches(episodes: Sequence[Episode], index: List[Tuple[int, int]], batch_size: int,
             cfg: ModelConfig, rng: np.random.Generator):
    for lo in range(0, len(index), batch_size):
        samples = [sample_window(episodes[e], s, cfg.geometry, rng, cfg.temporal_period)
                   for e, s in index[lo:lo + batch_size]]
        yield stack_samples(samples, np.float64)


def evaluate_loss(params: ModelParams, episodes: Sequence[Episode], cfg: ModelConfig,
                  sched: NoiseSchedule, sigma: float, seed: int, batch_size: int) -> float:
    """Mean loss over every window with fixed draws (NaN when there are no windows)."""
    index = window_index(episodes, cfg.geometry)
    if not index:
        return float("nan")
    rng = stream_rng(seed, "eval", 0)
    total, count = 0.0, 0
    for batch in _batches(episodes, index, batch_size, cfg, rng):
        n = len(batch[0])
        draws = LossDraws.draw(n, cfg.geometry, cfg.action_dim, sched.num_steps, rng)
        total += loss_from_draws(params, batch, draws, sched, cfg, sigma).item() * n
        count += n
    return total / count


def train(dataset: Sequence[Episode], cfg: TrainConfig, model_cfg: ModelConfig,
          metrics_path: Optional[Union[str, Path]] = None,
          resume: Optional[ResumeState] = None) -> TrainResult:
    """
    Fit the model on demonstration episodes.

    Args:
        dataset: Raw (unnormalized) episodes
        cfg: Optimization settings
        model_cfg: Architecture and geometry
        metrics_path: Optional CSV (epoch,loss,val_loss) written after every epoch
        resume: Params, normalization stats and "train.*" state from a checkpoint

    Returns:
        TrainResult; identical across runs with the same seed
    """
    if not dataset:
        raise ConfigError("training needs at least one episode", "dataset")
    dtype = np.dtype(cfg.precision)
    sched = schedule_from_dict(model_cfg.schedule)

    if resume is not None:
        act_norm = MinMaxNormalizer.from_dict(resume.stats["action"])
        obs_norm = MinMaxNormalizer.from_dict(resume.stats["obs"])
        params = resume.params.astype(dtype)
    else:
        act_norm = MinMaxNormalizer.fit([ep.actions for ep in dataset])
        obs_norm = MinMaxNormalizer.fit([ep.observations for ep in dataset])
        params = init_params(model_cfg, stream_rng(cfg.seed, "init"), dtype)

    episodes = [ep.normalized(act_norm, obs_norm) for ep in dataset]
    train_eps, val_eps = split_episodes(episodes, cfg.val_fraction, stream_rng(cfg.seed, "data"))
    index = window_index(train_eps, model_cfg.geometry)
    if not index:
        raise ConfigError(f"no episode is long enough for a {model_cfg.geometry.target_len}-step target",
                          "dataset")

    trainable = params.trainable()
    for t in trainable.values():
        t.requires_grad = True
    optimizer = Adam(trainable)
    steps_per_epoch = math.ceil(len(index) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs

    start_epoch, step = 0, 0
    if resume is not None:
        optimizer.load_state_dict(resume.state)
        start_epoch = int(resume.state["epoch"][0])
        step = int(resume.state["step"][0])
        logger.info(f"🔁 Resuming from epoch {start_epoch}, step {step}")

    logger.info(f"🏋️ Training on {len(train_eps)} episodes ({len(index)} windows), "
                f"{len(val_eps)} held out, {steps_per_epoch} steps/epoch")

    result = TrainResult(params, act_norm, obs_norm, optimizer, start_epoch, step)
    writer = _MetricsWriter(metrics_path, append=resume is not None)

    for epoch in range(start_epoch, cfg.epochs):
        data_rng = stream_rng(cfg.seed, "data", epoch + 1)
        noise_rng = stream_rng(cfg.seed, "noise", epoch + 1)
        order = [index[i] for i in data_rng.permutation(len(index))]
        losses = []
        for batch in _batches(train_eps, order, cfg.batch_size, model_cfg, data_rng):
            draws = LossDraws.draw(len(batch[0]), model_cfg.geometry, model_cfg.action_dim,
                                   sched.num_steps, noise_rng)
            lr = cosine_lr(cfg.learning_rate, step, total_steps)
            value = train_step(params, optimizer, batch, draws, sched, model_cfg, cfg.sigma, lr)
            losses.append(value)
            result.step_losses.append(value)
            step += 1

        val_loss = evaluate_loss(params, val_eps, model_cfg, sched, cfg.sigma, cfg.seed, cfg.batch_size)
        metrics = EpochMetrics(epoch + 1, float(np.mean(losses)), val_loss)
        result.metrics.append(metrics)
        writer.write(metrics)
        logger.info(f"📊 Epoch {metrics.epoch}/{cfg.epochs} loss={metrics.loss:.5f} val_loss={val_loss:.5f}")

    result.epoch = max(start_epoch, cfg.epochs)
    result.step = step
    for t in trainable.values():
        t.requires_grad = False
    return result


class _MetricsWriter:
    HEADER = ["epoch", "loss", "val_loss"]

    def __init__(self, path: Optional[Union[str, Path]], append: bool = False):
        self.path = Path(path) if path is not None else None
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not (append and self.path.exists()):
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(self.HEADER)

    def write(self, metrics: EpochMetrics):
        if self.path is None:
            return
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([metrics.epoch, f"{metrics.loss:.8f}", f"{metrics.val_loss:.8f}"])
