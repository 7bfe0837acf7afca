"""
Per-AR-step latency with and without the history K/V cache
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from config.seeding import stream_rng
from config.settings import RolloutSettings
from policy.geometry import PolicyGeometry
from policy.model import ModelConfig, ModelParams, init_params
from rollout.session import ar_step, init_session

logger = logging.getLogger(__name__)

BENCH_HEADER = ["L", "cached_ms", "uncached_ms", "speedup"]


@dataclass
class BenchRow:
    history_len: int
    cached_ms: float
    uncached_ms: float
    max_abs_diff: float

    @property
    def speedup(self) -> float:
        return self.uncached_ms / self.cached_ms if self.cached_ms > 0 else float("inf")


def time_rollout(params: ModelParams, cfg: ModelConfig, observations: np.ndarray, use_cache: bool,
                 seed: int) -> tuple:
    """Run one session over a fixed observation stream; returns (actions, denoise ms per step)."""
    session = init_session(cfg, rng=stream_rng(seed, "noise", 0), use_cache=use_cache, dtype=params.dtype)
    actions = np.stack([ar_step(session, obs, params) for obs in observations])
    # the cache fills one chunk per step from a cold start
    steady = session.timings[cfg.geometry.num_chunks:] or session.timings[-1:]
    return actions, float(np.mean([t.denoise_ms for t in steady]))


def bench_params(params: ModelParams, cfg: ModelConfig, ar_steps: int, seed: int) -> BenchRow:
    observations = stream_rng(seed, "eval", cfg.geometry.history_len).uniform(
        -1.0, 1.0, size=(ar_steps, cfg.obs_dim))
    cached, cached_ms = time_rollout(params, cfg, observations, True, seed)
    recomputed, uncached_ms = time_rollout(params, cfg, observations, False, seed)
    diff = float(np.max(np.abs(cached - recomputed)))
    row = BenchRow(cfg.geometry.history_len, cached_ms, uncached_ms, diff)
    logger.info(f"⏱️ L={row.history_len}: cached {cached_ms:.2f} ms, uncached {uncached_ms:.2f} ms, "
                f"speedup {row.speedup:.2f}x, max |diff| {diff:.2e}")
    return row


def bench_cache(history_lens: Sequence[int] = tuple(RolloutSettings.BENCH_HISTORY_SWEEP),
                chunk: int = 8, target_len: int = 12, d_model: int = 128, n_heads: int = 4,
                n_blocks: int = 4, num_steps: int = 50, ar_steps: int = RolloutSettings.BENCH_AR_STEPS,
                action_dim: int = 2, obs_dim: int = 8, seed: int = 0, dtype=np.float32) -> List[BenchRow]:
    """Random-weight sweep over history lengths."""
    rows = []
    for L in history_lens:
        geom = PolicyGeometry(L, target_len, chunk, chunk)
        cfg = ModelConfig(action_dim, obs_dim, d_model, n_heads, n_blocks, 4 * d_model, geom,
                          schedule={"num_steps": num_steps, "kind": "cosine", "beta_min": 1e-4,
                                    "beta_max": 0.999})
        params = init_params(cfg, stream_rng(seed, "init", L), dtype)
        rows.append(bench_params(params, cfg, ar_steps, seed))
    return rows


def write_bench_csv(path: Union[str, Path], rows: Sequence[BenchRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(BENCH_HEADER)
        for r in rows:
            writer.writerow([r.history_len, f"{r.cached_ms:.4f}", f"{r.uncached_ms:.4f}", f"{r.speedup:.4f}"])
    return path
