"""
Historical-action key/value cache
Per-block K/V of real (seeded or executed) history actions, shared by every
denoising timestep of an AR step and carried into later AR steps with
chunk-granular eviction. Cold-start padding never enters the cache.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from numkernel import Tensor, concat, slice_axis
from policy.errors import ContractError, ShapeError
from policy.masking import build_training_mask
from policy.model import ModelConfig, ModelParams, embed_actions, encode_observation, run_blocks

logger = logging.getLogger(__name__)


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """[rows, d_model] -> [n_heads, rows, d_head]"""
    rows, d = x.shape
    return x.reshape(rows, n_heads, d // n_heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """[n_heads, rows, d_head] -> [rows, d_model]"""
    n_heads, rows, d_head = x.shape
    return x.transpose(1, 0, 2).reshape(rows, n_heads * d_head)


@dataclass
class BlockQKV:
    """CTA projections of a run of history tokens for one block, [rows, d_model] each."""

    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    @property
    def rows(self) -> int:
        return self.keys.shape[0]


class KVCache:
    """
    Key/value memory per block, stored head-split as [n_heads, l, d_head].

    Args:
        n_blocks: P
        n_heads: Attention heads per block
        d_head: Width of one head
        capacity: L, the most entries ever held
        chunk: C, the eviction and append granularity
    """

    def __init__(self, n_blocks: int, n_heads: int, d_head: int, capacity: int, chunk: int,
                 dtype=np.float64):
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.d_head = d_head
        self.capacity = capacity
        self.chunk = chunk
        self.dtype = np.dtype(dtype)
        self.keys: List[np.ndarray] = []
        self.values: List[np.ndarray] = []
        self.l = 0
        self.clear()

    @classmethod
    def for_model(cls, cfg: ModelConfig, dtype=np.float64) -> "KVCache":
        geom = cfg.geometry
        return cls(cfg.n_blocks, cfg.n_heads, cfg.d_head, geom.history_len, geom.chunk, dtype)

    def clear(self):
        empty = (self.n_heads, 0, self.d_head)
        self.keys = [np.zeros(empty, dtype=self.dtype) for _ in range(self.n_blocks)]
        self.values = [np.zeros(empty, dtype=self.dtype) for _ in range(self.n_blocks)]
        self.l = 0

    @property
    def num_chunks(self) -> int:
        return self.l // self.chunk

    def num_scalars(self) -> int:
        return int(sum(k.size + v.size for k, v in zip(self.keys, self.values)))

    def window(self, block: int, length: int) -> Tuple[np.ndarray, np.ndarray]:
        """Most recent `length` entries of one block as [length, d_model] keys and values."""
        if not 0 <= length <= self.l:
            raise ContractError(f"cache window {length} outside [0, {self.l}]")
        start = self.l - length
        return (merge_heads(self.keys[block][:, start:, :]),
                merge_heads(self.values[block][:, start:, :]))

    def append(self, chunk_kv: Sequence[Tuple[np.ndarray, np.ndarray]], evict: bool = True):
        """Store one chunk of [C, d_model] keys/values per block."""
        if len(chunk_kv) != self.n_blocks:
            raise ContractError(f"expected K/V for {self.n_blocks} blocks, got {len(chunk_kv)}")
        for k, v in chunk_kv:
            if k.shape[0] != self.chunk or v.shape[0] != self.chunk:
                raise ContractError(f"chunk length {k.shape[0]} != C={self.chunk}")
        if self.l + self.chunk > self.capacity:
            if not evict or self.l < self.chunk:
                raise ContractError(f"cache overflow: {self.l} + {self.chunk} > {self.capacity}")
            drop = self.chunk
        else:
            drop = 0
        for p, (k, v) in enumerate(chunk_kv):
            self.keys[p] = np.concatenate(
                [self.keys[p][:, drop:, :], split_heads(np.asarray(k, dtype=self.dtype), self.n_heads)], axis=1)
            self.values[p] = np.concatenate(
                [self.values[p][:, drop:, :], split_heads(np.asarray(v, dtype=self.dtype), self.n_heads)], axis=1)
        self.l = self.l - drop + self.chunk


def extract_uncached_kv(uncached_history: np.ndarray, obs, offset: int, params: ModelParams,
                        cfg: ModelConfig, start: Optional[int] = None) -> List[BlockQKV]:
    """
    Per-block CTA projections of a run of uncached history tokens.

    Each history chunk attends only to itself, so the result depends on the
    actions, their temporal indices and the observation; never on the cache
    contents or the denoising timestep.

    Args:
        uncached_history: [n, action_dim] clean actions, n a multiple of C
        obs: Current observation vector, or encoded features [n_obs_tokens, d_model]
        offset: Temporal offset of the AR step
        params, cfg: Model
        start: Window position of the first row (default L - n, the trailing rows)

    Returns:
        One BlockQKV per block ([] rows when nothing is uncached)
    """
    geom = cfg.geometry
    L, C = geom.history_len, geom.chunk
    n = uncached_history.shape[0]
    d = cfg.d_model
    if n == 0:
        empty = np.zeros((0, d), dtype=params.dtype)
        return [BlockQKV(empty, empty, empty) for _ in range(cfg.n_blocks)]
    start = L - n if start is None else start
    if n % C or start % C or start < 0 or start + n > L:
        raise ShapeError(f"uncached history of {n} rows at position {start} is not a whole number "
                         f"of chunks within L={L}")

    rows = slice(start, start + n)
    tokens = embed_actions(np.asarray(uncached_history, dtype=params.dtype), np.arange(start, start + n),
                           offset, params, cfg)
    obs_feat = obs if isinstance(obs, Tensor) else encode_observation(obs, params, cfg)
    mask = build_training_mask(geom).take(rows, rows)
    records: list = []
    run_blocks(tokens, mask, obs_feat, None, params, cfg, n_history=n, records=records)
    return [BlockQKV(q.data, k.data, v.data) for q, k, v in records]


def assemble_qkv(cache: KVCache, block: int, cached_len: int, uncached: BlockQKV,
                 target_qkv: Tuple[Tensor, Tensor, Tensor]) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Q = [Q_uncached, Q_targets], K = [K_uncached, K_cached, K_targets], V likewise.

    Keys follow window order: the uncached leading rows, then the cached
    trailing rows. The history parts are constant across the denoising loop;
    only the target projections change with t.
    """
    q_t, k_t, v_t = target_qkv
    if cached_len + uncached.rows != cache.capacity:
        raise ShapeError(f"cached {cached_len} + uncached {uncached.rows} != L={cache.capacity}")
    if not (q_t.shape[0] == k_t.shape[0] == v_t.shape[0]):
        raise ShapeError(f"target q/k/v rows differ: {q_t.shape}, {k_t.shape}, {v_t.shape}")
    k_cached, v_cached = cache.window(block, cached_len)
    history_k = Tensor(np.concatenate([uncached.keys, k_cached], axis=0))
    history_v = Tensor(np.concatenate([uncached.values, v_cached], axis=0))
    q = concat([Tensor(uncached.queries), q_t], axis=0) if uncached.rows else q_t
    return q, concat([history_k, k_t], axis=0), concat([history_v, v_t], axis=0)


def evict_and_append(cache: KVCache, new_chunk_kv: Sequence[Tuple[np.ndarray, np.ndarray]]) -> KVCache:
    """Drop the oldest chunk when full, then store the new one."""
    cache.append(new_chunk_kv, evict=True)
    return cache


def commit_uncached(cache: KVCache, uncached: List[BlockQKV], start: int, stop: int) -> KVCache:
    """Move rows [start, stop) of freshly extracted K/V into the cache, oldest chunk first."""
    chunk = cache.chunk
    for lo in range(start, stop, chunk):
        evict_and_append(cache, [(u.keys[lo:lo + chunk], u.values[lo:lo + chunk]) for u in uncached])
    return cache


def target_rows(x: Tensor, n_uncached: int) -> Tensor:
    """Drop the uncached-history query rows from an assembled Q."""
    return slice_axis(x, n_uncached, x.shape[0], axis=0) if n_uncached else x
