"""
Chunk-wise autoregressive inference
Each AR step denoises M target actions conditioned on the last L executed
actions, returns the first C, and slides the history window by one chunk.
"""

import time
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from numkernel import Tensor, slice_axis
from policy.cache import (
    BlockQKV,
    KVCache,
    assemble_qkv,
    commit_uncached,
    extract_uncached_kv,
    target_rows,
)
from policy.errors import ContractError, RangeError
from policy.masking import AttentionMask, build_inference_mask, build_training_mask
from policy.model import (
    ModelConfig,
    ModelParams,
    cta_output,
    cta_qkv,
    decode_head,
    embed_actions,
    embed_tokens,
    encode_observation,
    mlp_forward,
    run_blocks,
    vaca_forward,
)
from policy.schedule import NoiseSchedule, denoise_step_x0, inference_timesteps, schedule_from_dict

logger = logging.getLogger(__name__)


@dataclass
class StepTiming:
    ar_step: int
    kv_extract_ms: float
    denoise_ms: float
    cache_len: int
    env_ms: float = 0.0


@dataclass
class RolloutSession:
    """
    Mutable state of one closed-loop rollout.

    history: last L actions (normalized space); the trailing `n_real` rows are
        seeded or executed actions, the leading rest is cold-start padding
    chunk_obs: observation each real history chunk is conditioned on; None
        for chunks that still hold padding, which follow the current observation
    """

    cfg: ModelConfig
    sched: NoiseSchedule
    cache: KVCache
    history: np.ndarray
    n_real: int
    chunk_obs: List[Optional[np.ndarray]]
    rng: np.random.Generator
    use_cache: bool = True
    stochastic: bool = False
    stride: int = 1
    ar_step: int = 0
    offset_base: int = 0
    timings: List[StepTiming] = field(default_factory=list)

    @property
    def offset(self) -> int:
        """Temporal offset of the current AR step: (k * C) mod period."""
        geom = self.cfg.geometry
        return (self.offset_base + self.ar_step * geom.chunk) % self.cfg.temporal_period

    @property
    def real_len(self) -> int:
        """Trailing history rows made of whole real chunks."""
        C = self.cfg.geometry.chunk
        return (self.n_real // C) * C

    @property
    def n_uncached(self) -> int:
        """Leading history rows with no cached K/V."""
        return self.cfg.geometry.history_len - self.cache.l


def init_session(cfg: ModelConfig, seed_history: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None, use_cache: bool = True,
                 stochastic: bool = False, stride: int = 1, dtype=np.float64) -> RolloutSession:
    """
    Fresh session with an empty cache and a fully uncached history.

    Args:
        seed_history: Up to L warm-start actions (normalized); missing leading
            entries repeat the first one. None gives L zero actions of padding.
    """
    geom = cfg.geometry
    L, A = geom.history_len, cfg.action_dim
    n_real = 0
    if seed_history is None:
        history = np.zeros((L, A), dtype=dtype)
    else:
        seed_history = np.asarray(seed_history, dtype=dtype).reshape(-1, A)
        n_real = len(seed_history)
        if n_real > L:
            raise RangeError(f"seed history of {n_real} actions exceeds L={L}")
        if n_real == 0:
            history = np.zeros((L, A), dtype=dtype)
        else:
            pad = np.repeat(seed_history[:1], L - n_real, axis=0)
            history = np.concatenate([pad, seed_history], axis=0)

    return RolloutSession(
        cfg=cfg,
        sched=schedule_from_dict(cfg.schedule),
        cache=KVCache.for_model(cfg, dtype),
        history=history,
        n_real=n_real,
        chunk_obs=[None] * geom.num_chunks,
        rng=rng if rng is not None else np.random.default_rng(0),
        use_cache=use_cache,
        stochastic=stochastic,
        stride=stride,
    )


def predict_cached(x_t: np.ndarray, t: int, session: RolloutSession, uncached: List[BlockQKV],
                   obs_feat: Tensor, mask: AttentionMask, params: ModelParams) -> np.ndarray:
    """
    x0 prediction that runs only the M target rows through the blocks; history
    keys/values come from the pre-extracted leading rows and the cache window.
    """
    cfg = session.cfg
    geom = cfg.geometry
    cached = session.cache.l
    n = geom.history_len - cached
    positions = np.arange(geom.history_len, geom.total_len)
    x = embed_actions(x_t, positions, session.offset, params, cfg)
    for p in range(cfg.n_blocks):
        q, k, v = assemble_qkv(session.cache, p, cached, uncached[p], cta_qkv(x, params, p))
        x = cta_output(x, target_rows(q, n), k, v, mask, params, p, cfg)
        x = vaca_forward(x, obs_feat, t, params, p, cfg, n_history=0)
        x = mlp_forward(x, params, p, cfg)
    return decode_head(x, params).data


def predict_recompute(x_t: np.ndarray, t: int, session: RolloutSession, chunk_feats: List[Tensor],
                      obs_feat: Tensor, params: ModelParams) -> np.ndarray:
    """x0 prediction recomputing every history feature from scratch."""
    cfg = session.cfg
    geom = cfg.geometry
    tokens = embed_tokens(session.history, x_t, session.offset, params, cfg)
    spans = [(geom.chunk, feat) for feat in chunk_feats] + [(geom.target_len, obs_feat)]
    x = run_blocks(tokens, build_training_mask(geom), spans, t, params, cfg, n_history=geom.history_len)
    return decode_head(slice_axis(x, geom.history_len, geom.total_len, axis=-2), params).data


def ar_step(session: Optional[RolloutSession], obs: np.ndarray, params: ModelParams,
            cfg: Optional[ModelConfig] = None) -> np.ndarray:
    """
    One AR step: extract the uncached history, run the reverse chain over
    fresh target noise, execute the first C actions, slide the window and
    cache the newly real chunks.

    Returns:
        [C, action_dim] executed actions (normalized space)
    """
    if session is None:
        raise ContractError("ar_step called without an initialized session")
    cfg = cfg or session.cfg
    geom = cfg.geometry
    L, M, C = geom.history_len, geom.target_len, geom.chunk
    dtype = params.dtype
    obs = np.asarray(obs, dtype=dtype)
    obs_feat = encode_observation(obs, params, cfg)

    # real chunks seen for the first time are conditioned on this observation
    first_real = (L - session.real_len) // C
    for j in range(first_real, geom.num_chunks):
        if session.chunk_obs[j] is None:
            session.chunk_obs[j] = obs

    kv_start = time.perf_counter()
    if session.use_cache:
        cached = session.cache.l
        n = L - cached
        uncached = extract_uncached_kv(session.history[:n].astype(dtype), obs_feat, session.offset,
                                       params, cfg, start=0)
        mask = build_inference_mask(geom.with_cached(cached)).drop_rows(n)
    else:
        chunk_feats = [encode_observation(obs if o is None else o, params, cfg) for o in session.chunk_obs]
    kv_ms = (time.perf_counter() - kv_start) * 1000.0

    denoise_start = time.perf_counter()
    x = session.rng.standard_normal((M, cfg.action_dim)).astype(dtype)
    steps = inference_timesteps(session.sched, session.stride)
    for i, t in enumerate(steps):
        if session.use_cache:
            x0 = predict_cached(x, t, session, uncached, obs_feat, mask, params)
        else:
            x0 = predict_recompute(x, t, session, chunk_feats, obs_feat, params)
        prev_t = steps[i + 1] if i + 1 < len(steps) else None
        noise = session.rng.standard_normal(x.shape) if session.stochastic and t > 0 else None
        x = denoise_step_x0(x, x0, t, session.sched, noise, session.stochastic, prev_t)
    denoise_ms = (time.perf_counter() - denoise_start) * 1000.0

    executed = x[:C].copy()
    commit_start = time.perf_counter()
    if session.use_cache:
        # seeded chunks that were still uncached at this step
        commit_uncached(session.cache, uncached, L - session.real_len, n)
    if L:
        next_offset = (session.offset + C) % cfg.temporal_period
        session.history = np.concatenate([session.history[C:], executed.astype(session.history.dtype)], axis=0)
        session.n_real = min(L, session.n_real + C)
        session.chunk_obs = session.chunk_obs[1:] + [obs]
        if session.use_cache:
            fresh = extract_uncached_kv(executed, obs_feat, next_offset, params, cfg)
            commit_uncached(session.cache, fresh, 0, C)
    kv_ms += (time.perf_counter() - commit_start) * 1000.0

    session.timings.append(StepTiming(session.ar_step, kv_ms, denoise_ms, session.cache.l))
    session.ar_step += 1
    return executed
