"""
Causal action generation network
Action + cyclic temporal embeddings, P blocks of
(causal temporal attention -> visual-action cross attention -> MLP),
each sub-layer residual and post-normed, and a linear action head.

Every function accepts an optional leading batch axis; rows live on axis -2.
"""

import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from numkernel import (
    Tensor,
    add,
    concat,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    reshape,
    scale,
    slice_axis,
    softmax_masked,
    transpose,
)
from policy.errors import ConfigError, RangeError, ShapeError
from policy.geometry import PolicyGeometry
from policy.masking import AttentionMask, build_training_mask

logger = logging.getLogger(__name__)

INIT_STD = 0.02

# (rows covered, observation features) pairs; see vaca_forward
ObsSpans = List[Tuple[int, Tensor]]


@dataclass(frozen=True)
class ModelConfig:
    action_dim: int
    obs_dim: int
    d_model: int
    n_heads: int
    n_blocks: int
    d_ff: int
    geometry: PolicyGeometry
    schedule: Dict[str, Union[int, float, str]] = field(default_factory=lambda: {
        "num_steps": 100, "kind": "cosine", "beta_min": 1e-4, "beta_max": 0.999})
    temporal_period: int = 0
    n_obs_tokens: int = 1
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.temporal_period == 0:
            object.__setattr__(self, "temporal_period", 4 * self.geometry.total_len)
        for name in ("action_dim", "obs_dim", "d_model", "n_heads", "d_ff", "n_obs_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", name)
        if self.n_blocks < 0:
            raise ConfigError(f"must be >= 0, got {self.n_blocks}", "n_blocks")
        if self.d_model % self.n_heads:
            raise ConfigError(f"n_heads {self.n_heads} does not divide d_model {self.d_model}", "n_heads")
        if self.temporal_period < self.geometry.total_len:
            raise ConfigError(
                f"period {self.temporal_period} shorter than L+M={self.geometry.total_len}",
                "temporal_period")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def num_steps(self) -> int:
        return int(self.schedule["num_steps"])

    def to_dict(self) -> dict:
        data = asdict(self)
        data["geometry"].pop("cached_len")
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["geometry"] = PolicyGeometry(**data["geometry"])
        data["schedule"] = dict(data["schedule"])
        return cls(**data)


class ModelParams:
    """Ordered name -> Tensor map holding every model weight."""

    FROZEN = ("timestep_table",)

    def __init__(self, tensors: Dict[str, Tensor]):
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> List[str]:
        return list(self._tensors)

    def trainable(self) -> Dict[str, Tensor]:
        return {k: v for k, v in self._tensors.items() if k not in self.FROZEN}

    @property
    def dtype(self):
        return next(iter(self._tensors.values())).dtype

    def num_scalars(self) -> int:
        return int(sum(t.data.size for t in self._tensors.values()))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.astype(dtype)) for k, v in self._tensors.items()})

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)


def sinusoidal_table(num_steps: int, width: int) -> np.ndarray:
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = np.arange(num_steps)[:, None] * freqs[None, :]
    table = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if width % 2:
        table = np.concatenate([table, np.zeros((num_steps, 1))], axis=1)
    return table


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """Scaled-normal projections, zero biases, unit layer-norm gains."""
    d, A = cfg.d_model, cfg.action_dim
    tensors: Dict[str, Tensor] = {}

    def normal(name, shape):
        tensors[name] = Tensor(rng.normal(0.0, INIT_STD, size=shape).astype(dtype))

    def zeros(name, shape):
        tensors[name] = Tensor(np.zeros(shape, dtype=dtype))

    def ones(name, shape):
        tensors[name] = Tensor(np.ones(shape, dtype=dtype))

    normal("action_embed.weight", (A, d))
    zeros("action_embed.bias", (d,))
    normal("temporal_embed", (cfg.temporal_period, d))
    tensors["timestep_table"] = Tensor(sinusoidal_table(cfg.num_steps, d).astype(dtype))
    normal("timestep_proj.weight", (d, d))
    zeros("timestep_proj.bias", (d,))
    normal("obs_encoder.fc1.weight", (cfg.obs_dim, d))
    zeros("obs_encoder.fc1.bias", (d,))
    normal("obs_encoder.fc2.weight", (d, cfg.n_obs_tokens * d))
    zeros("obs_encoder.fc2.bias", (cfg.n_obs_tokens * d,))

    for p in range(cfg.n_blocks):
        pre = f"blocks.{p}"
        normal(f"{pre}.cta.qkv.weight", (d, 3 * d))
        zeros(f"{pre}.cta.qkv.bias", (3 * d,))
        normal(f"{pre}.cta.out.weight", (d, d))
        zeros(f"{pre}.cta.out.bias", (d,))
        ones(f"{pre}.cta_norm.gain", (d,))
        zeros(f"{pre}.cta_norm.bias", (d,))
        normal(f"{pre}.vaca.q.weight", (d, d))
        zeros(f"{pre}.vaca.q.bias", (d,))
        normal(f"{pre}.vaca.kv.weight", (d, 2 * d))
        zeros(f"{pre}.vaca.kv.bias", (2 * d,))
        normal(f"{pre}.vaca.out.weight", (d, d))
        zeros(f"{pre}.vaca.out.bias", (d,))
        ones(f"{pre}.vaca_norm.gain", (d,))
        zeros(f"{pre}.vaca_norm.bias", (d,))
        normal(f"{pre}.mlp.fc1.weight", (d, cfg.d_ff))
        zeros(f"{pre}.mlp.fc1.bias", (cfg.d_ff,))
        normal(f"{pre}.mlp.fc2.weight", (cfg.d_ff, d))
        zeros(f"{pre}.mlp.fc2.bias", (d,))
        ones(f"{pre}.mlp_norm.gain", (d,))
        zeros(f"{pre}.mlp_norm.bias", (d,))

    normal("head.weight", (d, A))
    zeros("head.bias", (A,))

    params = ModelParams(tensors)
    logger.info(f"🧠 Initialized {len(params)} tensors / {params.num_scalars()} scalars")
    return params


def _as_input(value, params: ModelParams) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=params.dtype))


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def temporal_indices(offset, positions: np.ndarray, period: int) -> np.ndarray:
    """(offset + position) mod period, broadcast over a batch of offsets."""
    offset = np.asarray(offset, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int64)
    return (offset[..., None] + positions) % period


def embed_actions(actions, positions: np.ndarray, offset, params: ModelParams,
                  cfg: ModelConfig) -> Tensor:
    """Action embedding plus the cyclic temporal embedding of each position."""
    actions = _as_input(actions, params)
    if actions.shape[-1] != cfg.action_dim or actions.shape[-2] != len(positions):
        raise ShapeError(f"embed_actions: actions {actions.shape} vs {len(positions)} positions "
                         f"of width {cfg.action_dim}")
    tokens = linear(actions, params["action_embed.weight"], params["action_embed.bias"])
    idx = temporal_indices(offset, positions, cfg.temporal_period)
    return add(tokens, embedding(params["temporal_embed"], idx))


def embed_tokens(history, targets, offset, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """[history ++ targets] tokens; token i uses temporal row (offset + i) mod period."""
    offsets = np.asarray(offset)
    if offsets.min() < 0 or offsets.max() >= cfg.temporal_period:
        raise RangeError(f"offset must lie in [0, {cfg.temporal_period}), got {offset}")
    history = _as_input(history, params)
    targets = _as_input(targets, params)
    actions = concat([history, targets], axis=-2) if history.shape[-2] else targets
    positions = np.arange(actions.shape[-2])
    return embed_actions(actions, positions, offset, params, cfg)


def timestep_embedding(t, params: ModelParams) -> Tensor:
    """Sinusoidal row of the denoising step through a learned projection."""
    rows = embedding(params["timestep_table"], np.asarray(t, dtype=np.int64))
    if rows.ndim == 1:
        # scalar t
        d = rows.shape[0]
        out = linear(reshape(rows, (1, d)), params["timestep_proj.weight"], params["timestep_proj.bias"])
        return reshape(out, (out.shape[-1],))
    return linear(rows, params["timestep_proj.weight"], params["timestep_proj.bias"])


def encode_observation(obs, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Two-layer MLP; [..., obs_dim] -> [..., n_obs_tokens, d_model]."""
    obs = _as_input(obs, params)
    if obs.shape[-1] != cfg.obs_dim:
        raise ShapeError(f"encode_observation: expected width {cfg.obs_dim}, got {obs.shape}")
    lead = obs.shape[:-1]
    if obs.ndim == 1:
        obs = reshape(obs, (1, cfg.obs_dim))
    hidden = gelu(linear(obs, params["obs_encoder.fc1.weight"], params["obs_encoder.fc1.bias"]))
    feats = linear(hidden, params["obs_encoder.fc2.weight"], params["obs_encoder.fc2.bias"])
    return reshape(feats, lead + (cfg.n_obs_tokens, cfg.d_model))


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def attend(q: Tensor, k: Tensor, v: Tensor, mask, n_heads: int) -> Tensor:
    """Multi-head softmax(Q K^T / sqrt(d_head) + mask) V."""
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeError(f"attend: q {q.shape}, k {k.shape}, v {v.shape}")
    d_head = d // n_heads
    factor = 1.0 / math.sqrt(d_head)
    heads = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        q_h = q if n_heads == 1 else slice_axis(q, lo, hi, axis=-1)
        k_h = k if n_heads == 1 else slice_axis(k, lo, hi, axis=-1)
        v_h = v if n_heads == 1 else slice_axis(v, lo, hi, axis=-1)
        scores = scale(matmul(q_h, transpose(k_h)), factor)
        heads.append(matmul(softmax_masked(scores, mask), v_h))
    return concat(heads, axis=-1)


def cta_qkv(x: Tensor, params: ModelParams, block: int) -> Tuple[Tensor, Tensor, Tensor]:
    """Query/key/value projections of the causal temporal attention."""
    d = x.shape[-1]
    pre = f"blocks.{block}.cta"
    qkv = linear(x, params[f"{pre}.qkv.weight"], params[f"{pre}.qkv.bias"])
    return (slice_axis(qkv, 0, d, axis=-1),
            slice_axis(qkv, d, 2 * d, axis=-1),
            slice_axis(qkv, 2 * d, 3 * d, axis=-1))


def cta_output(x: Tensor, q: Tensor, k: Tensor, v: Tensor, mask: AttentionMask,
               params: ModelParams, block: int, cfg: ModelConfig) -> Tensor:
    """LN(x + out_proj(attention)) for the query rows x."""
    if mask.rows != q.shape[-2] or mask.cols != k.shape[-2]:
        raise ShapeError(f"cta: mask {mask.rows}x{mask.cols} vs {q.shape[-2]} queries / "
                         f"{k.shape[-2]} keys")
    pre = f"blocks.{block}"
    attn = attend(q, k, v, mask, cfg.n_heads)
    out = linear(attn, params[f"{pre}.cta.out.weight"], params[f"{pre}.cta.out.bias"])
    return layer_norm(add(x, out), params[f"{pre}.cta_norm.gain"], params[f"{pre}.cta_norm.bias"],
                      cfg.ln_eps)


def cta_forward(x: Tensor, mask: AttentionMask, params: ModelParams, block: int,
                cfg: ModelConfig, context: Optional[Tuple[Tensor, Tensor]] = None,
                record: Optional[list] = None) -> Tensor:
    """
    Causal temporal attention over the rows of x.

    Args:
        x: [..., rows, d] input features
        mask: rows x (context + rows) visibility
        context: Keys/values prepended to those of x (cache-augmented attention)
        record: When given, (q, k, v) of the rows of x are appended to it

    Returns:
        [..., rows, d]; no denoising-timestep input anywhere in this sub-layer
    """
    q, k, v = cta_qkv(x, params, block)
    if record is not None:
        record.append((q, k, v))
    if context is not None:
        k = concat([context[0], k], axis=-2)
        v = concat([context[1], v], axis=-2)
    return cta_output(x, q, k, v, mask, params, block, cfg)


def _with_timestep(x: Tensor, t, params: ModelParams, n_history: int) -> Tensor:
    """Add the timestep embedding to rows at index >= n_history."""
    rows = x.shape[-2]
    if t is None or n_history >= rows:
        return x
    temb = timestep_embedding(t, params)
    if temb.ndim == 2:
        temb = reshape(temb, (temb.shape[0], 1, temb.shape[1]))
    if n_history == 0:
        return add(x, temb)
    return concat([slice_axis(x, 0, n_history, axis=-2),
                   add(slice_axis(x, n_history, rows, axis=-2), temb)], axis=-2)


def vaca_forward(x: Tensor, obs: Union[Tensor, ObsSpans], t, params: ModelParams, block: int,
                 cfg: ModelConfig, n_history: int = 0) -> Tensor:
    """
    Cross attention from action tokens to observation features.

    The denoising-timestep embedding joins the query stream of target rows
    (index >= n_history) only; history rows stay timestep-free.
    `obs` is either one feature tensor shared by all rows or a list of
    (row_count, features) spans covering the rows in order.
    """
    pre = f"blocks.{block}"
    d = cfg.d_model
    rows = x.shape[-2]
    h = _with_timestep(x, t, params, n_history)
    q = linear(h, params[f"{pre}.vaca.q.weight"], params[f"{pre}.vaca.q.bias"])

    spans = obs if isinstance(obs, list) else [(rows, obs)]
    if sum(n for n, _ in spans) != rows:
        raise ShapeError(f"vaca: observation spans cover {sum(n for n, _ in spans)} of {rows} rows")

    outs = []
    start = 0
    for n_rows, feats in spans:
        kv = linear(feats, params[f"{pre}.vaca.kv.weight"], params[f"{pre}.vaca.kv.bias"])
        k = slice_axis(kv, 0, d, axis=-1)
        v = slice_axis(kv, d, 2 * d, axis=-1)
        q_span = q if len(spans) == 1 else slice_axis(q, start, start + n_rows, axis=-2)
        visible = np.ones((n_rows, feats.shape[-2]), dtype=bool)
        outs.append(attend(q_span, k, v, visible, cfg.n_heads))
        start += n_rows
    attn = concat(outs, axis=-2)
    out = linear(attn, params[f"{pre}.vaca.out.weight"], params[f"{pre}.vaca.out.bias"])
    return layer_norm(add(x, out), params[f"{pre}.vaca_norm.gain"], params[f"{pre}.vaca_norm.bias"],
                      cfg.ln_eps)


def mlp_forward(x: Tensor, params: ModelParams, block: int, cfg: ModelConfig) -> Tensor:
    pre = f"blocks.{block}"
    hidden = gelu(linear(x, params[f"{pre}.mlp.fc1.weight"], params[f"{pre}.mlp.fc1.bias"]))
    out = linear(hidden, params[f"{pre}.mlp.fc2.weight"], params[f"{pre}.mlp.fc2.bias"])
    return layer_norm(add(x, out), params[f"{pre}.mlp_norm.gain"], params[f"{pre}.mlp_norm.bias"],
                      cfg.ln_eps)


def run_blocks(x: Tensor, mask: AttentionMask, obs, t, params: ModelParams, cfg: ModelConfig,
               n_history: int, records: Optional[list] = None,
               activations: Optional[List[Tensor]] = None) -> Tensor:
    """
    Run all P blocks over a token sequence.

    Args:
        records: Optional list; receives the CTA (q, k, v) of every block
        activations: Optional list; receives every sub-layer output in order
    """
    for p in range(cfg.n_blocks):
        record = [] if records is not None else None
        x = cta_forward(x, mask, params, p, cfg, record=record)
        if activations is not None:
            activations.append(x)
        x = vaca_forward(x, obs, t, params, p, cfg, n_history)
        if activations is not None:
            activations.append(x)
        x = mlp_forward(x, params, p, cfg)
        if activations is not None:
            activations.append(x)
        if records is not None:
            records.append(record[0])
    return x


def decode_head(x: Tensor, params: ModelParams) -> Tensor:
    return linear(x, params["head.weight"], params["head.bias"])


def forward(history, noisy_targets, obs, t, offset, params: ModelParams, cfg: ModelConfig,
            records: Optional[list] = None,
            activations: Optional[List[Tensor]] = None) -> Tensor:
    """
    Predict clean target actions from [history ++ noisy targets].

    Args:
        history: [..., L, action_dim] (perturbed) historical actions
        noisy_targets: [..., M, action_dim]
        obs: [..., obs_dim] current observation
        t: Denoising timestep (int, or one per batch sample)
        offset: Cyclic temporal offset (int, or one per batch sample)

    Returns:
        [..., M, action_dim] predicted clean targets
    """
    geom = cfg.geometry
    tokens = embed_tokens(history, noisy_targets, offset, params, cfg)
    if tokens.shape[-2] != geom.total_len:
        raise ShapeError(f"forward: got {tokens.shape[-2]} tokens, geometry needs {geom.total_len}")
    obs_feat = encode_observation(obs, params, cfg)
    mask = build_training_mask(geom)
    x = run_blocks(tokens, mask, obs_feat, t, params, cfg, geom.history_len, records, activations)
    targets = slice_axis(x, geom.history_len, geom.total_len, axis=-2)
    return decode_head(targets, params)
