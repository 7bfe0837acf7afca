"""
Success-rate evaluation over episodes, seeds and observation-noise levels
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Union

import numpy as np

from config.seeding import stream_rng
from config.settings import Settings
from envs import make_env
from envs.degrade import DegradeSpec
from policy.checkpoint import load_checkpoint
from policy.model import ModelConfig, ModelParams
from policy.normalizer import MinMaxNormalizer
from rollout.runner import DiffusionPolicy, EpisodeResult, ExpertPolicy, run_episode

logger = logging.getLogger(__name__)

PolicyFactory = Callable[[], object]


@dataclass
class LoadedModel:
    params: ModelParams
    cfg: ModelConfig
    act_norm: MinMaxNormalizer
    obs_norm: MinMaxNormalizer
    run: dict = field(default_factory=dict)

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path], dtype=np.float64) -> "LoadedModel":
        ckpt = load_checkpoint(path)
        return cls(ckpt.params(dtype), ckpt.model_config(),
                   MinMaxNormalizer.from_dict(ckpt.stats["action"]),
                   MinMaxNormalizer.from_dict(ckpt.stats["obs"]), ckpt.stats.get("run", {}))

    def policy_factory(self, use_cache: bool = True, stochastic: bool = False,
                       stride: int = 1) -> PolicyFactory:
        return lambda: DiffusionPolicy(self.params, self.cfg, self.act_norm, self.obs_norm,
                                       use_cache=use_cache, stochastic=stochastic, stride=stride)


def expert_factory(task: str) -> PolicyFactory:
    return lambda: ExpertPolicy(make_env(task))


def run_episodes(task: str, factory: PolicyFactory, n_episodes: int, max_steps: int,
                 degrade: DegradeSpec, seed: int, workers: int = Settings.EVAL_WORKERS) -> List[EpisodeResult]:
    """
    Run independent episodes on a thread pool.
    Episode i always uses the same env and sampling streams, so results do
    not depend on the worker count.
    """
    def one(i: int) -> EpisodeResult:
        return run_episode(make_env(task), factory(), max_steps, degrade,
                           rng=stream_rng(seed, "eval", i), policy_rng=stream_rng(seed, "noise", i))

    if workers <= 1:
        return [one(i) for i in range(n_episodes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n_episodes)))


@dataclass
class NoiseLevelResult:
    noise_scale: float
    success_rate: float
    success_std: float
    mean_steps: float
    per_seed: List[float]

    def to_dict(self) -> dict:
        return {"success_rate": self.success_rate, "success_std": self.success_std,
                "mean_steps": self.mean_steps, "per_seed": self.per_seed}


def evaluate(task: str, factory: PolicyFactory, noise_levels: Sequence[float], seeds: Sequence[int],
             n_episodes: int, max_steps: int, dropout_prob: float = 0.0,
             workers: int = Settings.EVAL_WORKERS) -> List[NoiseLevelResult]:
    """Success rate (mean and std across seeds) and mean episode length per noise level."""
    rows = []
    for noise in noise_levels:
        spec = DegradeSpec(noise, dropout_prob)
        rates, lengths = [], []
        for seed in seeds:
            results = run_episodes(task, factory, n_episodes, max_steps, spec, seed, workers)
            rates.append(float(np.mean([r.success for r in results])))
            lengths.extend(r.steps for r in results)
        row = NoiseLevelResult(float(noise), float(np.mean(rates)), float(np.std(rates)),
                               float(np.mean(lengths)), rates)
        logger.info(f"📊 {task} noise={noise:g}: success {row.success_rate:.3f} ± {row.success_std:.3f}, "
                    f"mean steps {row.mean_steps:.1f}")
        rows.append(row)
    return rows


def results_json(rows: Sequence[NoiseLevelResult]) -> Dict[str, dict]:
    return {f"{row.noise_scale:g}": row.to_dict() for row in rows}
