"""
Property suite behind the `verify` command
Each property is a small self-contained check printing one line.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from numkernel import Tensor, add, gelu, layer_norm, matmul, mse, mul, softmax_masked, sum_all
from numkernel.gradcheck import check_gradients
from policy.cache import KVCache, extract_uncached_kv
from policy.checkpoint import decode_checkpoint, encode_checkpoint
from policy.errors import CDPError
from policy.geometry import PolicyGeometry
from policy.masking import AttentionMask, build_inference_mask, build_training_mask
from policy.model import ModelConfig, ModelParams, forward, init_params, temporal_indices
from policy.schedule import denoise_step_x0, inference_timesteps, make_schedule, q_sample
from rollout.session import ar_step, init_session
from training.trainer import LossDraws, loss_from_draws

logger = logging.getLogger(__name__)

MaskBuilder = Callable[[PolicyGeometry], AttentionMask]


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    results: List[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> List[str]:
        return [r.name for r in self.results if not r.passed]


def brute_force_visible(row: int, col: int, geom: PolicyGeometry) -> bool:
    """Reference rule: targets see everything, history sees its own chunk of history."""
    L, C = geom.history_len, geom.chunk
    if row >= L:
        return True
    return col < L and row // C == col // C


def mask_geometries(max_history: int = 12, max_target: int = 6):
    for L in range(0, max_history + 1):
        for C in range(1, max(L, 1) + 1):
            if L and L % C:
                continue
            for M in range(C, max_target + 1):
                yield PolicyGeometry(L, M, C, C)


def tiny_config(history_len: int = 4, chunk: int = 2, target_len: int = 4, n_blocks: int = 2,
                d_model: int = 16, n_heads: int = 2, num_steps: int = 10, obs_dim: int = 3,
                n_obs_tokens: int = 1) -> ModelConfig:
    geom = PolicyGeometry(history_len, target_len, chunk, chunk)
    return ModelConfig(action_dim=2, obs_dim=obs_dim, d_model=d_model, n_heads=n_heads, n_blocks=n_blocks,
                       d_ff=2 * d_model, geometry=geom,
                       schedule={"num_steps": num_steps, "kind": "cosine", "beta_min": 1e-4, "beta_max": 0.999},
                       n_obs_tokens=n_obs_tokens)


def random_params(cfg: ModelConfig, rng: np.random.Generator, gain: float = 10.0) -> ModelParams:
    """float64 weights scaled up from the training init so every path carries signal."""
    params = init_params(cfg, rng, np.float64)
    for name, t in params.items():
        if name.endswith("weight") or name == "temporal_embed":
            t.data *= gain
        elif name.endswith("bias"):
            t.data += rng.normal(0.0, 0.1, size=t.shape)
    return params


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------

def check_mask_oracle(training_builder: MaskBuilder = build_training_mask,
                      inference_builder: MaskBuilder = build_inference_mask) -> Tuple[bool, str]:
    cells = 0
    for geom in mask_geometries():
        rows = np.arange(geom.total_len)
        expected = np.array([[brute_force_visible(r, c, geom) for c in rows] for r in rows], dtype=bool)
        if not np.array_equal(training_builder(geom).visible, expected):
            return False, f"training mask differs for L={geom.history_len} C={geom.chunk} M={geom.target_len}"
        cells += expected.size
        for l in range(0, geom.history_len + 1, geom.chunk):
            got = inference_builder(geom.with_cached(l)).visible
            if not np.array_equal(got, expected[l:]):
                return False, (f"inference mask differs for L={geom.history_len} C={geom.chunk} "
                               f"M={geom.target_len} l={l}")
            cells += got.size
    return True, f"{cells} cells match the rule evaluator"


def check_inference_is_training_minus_rows() -> Tuple[bool, str]:
    for geom in mask_geometries():
        full = build_training_mask(geom)
        for l in range(0, geom.history_len + 1, geom.chunk):
            if build_inference_mask(geom.with_cached(l)) != full.drop_rows(l):
                return False, f"mismatch at {geom}"
    return True, "inference mask == training mask without the first l rows"


def check_softmax_rows(rng: np.random.Generator) -> Tuple[bool, str]:
    geom = PolicyGeometry(8, 6, 4, 4)
    mask = build_training_mask(geom)
    probs = softmax_masked(Tensor(rng.normal(0, 5, size=(3, geom.total_len, geom.total_len))), mask).data
    rows_ok = np.allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    blocked_ok = np.all(probs[:, ~mask.visible] == 0.0)
    return bool(rows_ok and blocked_ok), "rows sum to 1, blocked cells exactly 0"


def check_kernel_gradients(rng: np.random.Generator) -> Tuple[bool, str]:
    a = Tensor(rng.normal(size=(2, 3, 4)))
    b = Tensor(rng.normal(size=(4, 5)))
    gain = Tensor(rng.normal(size=5))
    bias = Tensor(rng.normal(size=5))
    w = Tensor(rng.normal(size=(2, 3, 5)))
    visible = np.array([[1, 1, 0], [0, 1, 1], [1, 1, 1]], dtype=bool)
    target = rng.normal(size=(2, 3, 3))

    def loss_fn():
        h = layer_norm(gelu(matmul(a, b)), gain, bias)
        scores = softmax_masked(matmul(h, Tensor(np.swapaxes(w.data, -1, -2))), visible)
        return add(mse(scores, target), sum_all(mul(h, w)))

    report = check_gradients(loss_fn, {"a": a, "b": b, "gain": gain, "bias": bias})
    return report.passed, f"max relative error {report.max_error:.2e}"


def check_model_gradients(rng: np.random.Generator, batches: int = 1,
                          max_entries: Optional[int] = 4) -> Tuple[bool, str]:
    cfg = tiny_config()
    params = init_params(cfg, rng, np.float64)
    sched = make_schedule(cfg.num_steps)
    geom = cfg.geometry
    worst = 0.0
    for _ in range(batches):
        B = 2
        batch = (rng.normal(size=(B, geom.history_len, 2)), rng.normal(size=(B, geom.target_len, 2)),
                 rng.normal(size=(B, cfg.obs_dim)), rng.integers(0, cfg.temporal_period, size=B))
        draws = LossDraws.draw(B, geom, 2, sched.num_steps, rng)
        report = check_gradients(lambda: loss_from_draws(params, batch, draws, sched, cfg, 1.0 / 6.0),
                                 params.trainable(), max_entries=max_entries, rng=rng)
        worst = max(worst, report.max_error)
    return worst < 1e-4, f"{len(params.trainable())} tensors, max relative error {worst:.2e}"


def check_schedule_invariants() -> Tuple[bool, str]:
    for kind in ("linear", "cosine"):
        for T in (10, 50, 100):
            s = make_schedule(T, kind)
            if not np.allclose(s.alpha_bars, np.cumprod(1.0 - s.betas), rtol=0, atol=1e-12):
                return False, f"{kind} T={T}: alpha_bar is not the running product"
            if not (np.all(np.diff(s.alpha_bars) < 0) and np.all((s.alpha_bars > 0) & (s.alpha_bars < 1))):
                return False, f"{kind} T={T}: alpha_bar not strictly decreasing in (0, 1)"
    return True, "alpha_bar = prod(1 - beta), strictly decreasing, in (0, 1)"


def check_schedule_round_trip(rng: np.random.Generator) -> Tuple[bool, str]:
    worst = 0.0
    for stride in (1, 3):
        sched = make_schedule(50)
        x0 = rng.normal(size=(12, 2))
        x = q_sample(x0, sched.num_steps - 1, rng.normal(size=x0.shape), sched)
        steps = inference_timesteps(sched, stride)
        for i, t in enumerate(steps):
            x = denoise_step_x0(x, x0, t, sched, prev_t=steps[i + 1] if i + 1 < len(steps) else None)
        worst = max(worst, float(np.max(np.abs(x - x0))))
    return worst <= 1e-6, f"max |x - x0| {worst:.2e}"


def check_q_sample_zero_signal(rng: np.random.Generator) -> Tuple[bool, str]:
    sched = make_schedule(20)
    noise = rng.normal(size=(5, 2))
    for t in range(sched.num_steps):
        got = q_sample(np.zeros((5, 2)), t, noise, sched)
        if not np.allclose(got, np.sqrt(1 - sched.alpha_bars[t]) * noise, atol=1e-15):
            return False, f"t={t}"
    return True, "q_sample(0, t, n) == sqrt(1 - abar_t) * n"


def check_temporal_wraparound(rng: np.random.Generator) -> Tuple[bool, str]:
    period = 40
    positions = np.arange(20)
    if temporal_indices(period - 1, positions, period)[1] != 0:
        return False, "offset period-1 does not wrap to 0"
    offsets = rng.integers(0, period, size=50)
    got = temporal_indices(offsets, positions, period)
    ok = np.array_equal(got, (offsets[:, None] + positions[None, :]) % period)
    return bool(ok), "indices == (offset + i) mod period"


def _forward_records(params, cfg, history, targets, obs, t, offset):
    records, acts = [], []
    forward(history, targets, obs, t, offset, params, cfg, records=records, activations=acts)
    return records, acts


def check_kv_timestep_invariance(rng: np.random.Generator) -> Tuple[bool, str]:
    cfg = tiny_config(history_len=6, chunk=2, target_len=4, n_blocks=3)
    params = random_params(cfg, rng)
    L = cfg.geometry.history_len
    history, targets = rng.normal(size=(L, 2)), rng.normal(size=(4, 2))
    obs, offset = rng.normal(size=cfg.obs_dim), int(rng.integers(cfg.temporal_period))
    base, _ = _forward_records(params, cfg, history, targets, obs, 0, offset)
    for t in range(1, cfg.num_steps):
        other, _ = _forward_records(params, cfg, history, targets, obs, t, offset)
        for (_, k0, v0), (_, k1, v1) in zip(base, other):
            if not (np.array_equal(k0.data[:L], k1.data[:L]) and np.array_equal(v0.data[:L], v1.data[:L])):
                return False, f"history K/V changed between t=0 and t={t}"
    return True, f"history K/V bit-identical for all {cfg.num_steps} timesteps and {cfg.n_blocks} blocks"


def check_causality(rng: np.random.Generator) -> Tuple[bool, str]:
    cfg = tiny_config(history_len=6, chunk=2, target_len=4, n_blocks=2)
    params = random_params(cfg, rng)
    L = cfg.geometry.history_len
    history, targets = rng.normal(size=(L, 2)), rng.normal(size=(4, 2))
    obs = rng.normal(size=cfg.obs_dim)
    _, base = _forward_records(params, cfg, history, targets, obs, 3, 0)
    _, moved = _forward_records(params, cfg, history, targets + rng.normal(size=targets.shape), obs, 3, 0)
    ok = all(np.array_equal(a.data[:L], b.data[:L]) for a, b in zip(base, moved))
    return ok, "target perturbations never reach history rows"


def check_chunk_isolation(rng: np.random.Generator) -> Tuple[bool, str]:
    cfg = tiny_config(history_len=6, chunk=2, target_len=4, n_blocks=2)
    params = random_params(cfg, rng)
    C = cfg.geometry.chunk
    history, targets = rng.normal(size=(6, 2)), rng.normal(size=(4, 2))
    obs = rng.normal(size=cfg.obs_dim)
    _, base = _forward_records(params, cfg, history, targets, obs, 2, 0)
    for j in range(cfg.geometry.num_chunks):
        bumped = history.copy()
        bumped[j * C:(j + 1) * C] += rng.normal(size=(C, 2))
        _, moved = _forward_records(params, cfg, bumped, targets, obs, 2, 0)
        for i in range(cfg.geometry.num_chunks):
            if i == j:
                continue
            rows = slice(i * C, (i + 1) * C)
            if not all(np.array_equal(a.data[rows], b.data[rows]) for a, b in zip(base, moved)):
                return False, f"chunk {j} leaked into chunk {i}"
    return True, "history chunks never see each other"


def check_extraction_matches_forward(rng: np.random.Generator) -> Tuple[bool, str]:
    cfg = tiny_config(history_len=8, chunk=2, target_len=4, n_blocks=3)
    params = random_params(cfg, rng)
    L, C = cfg.geometry.history_len, cfg.geometry.chunk
    history, targets = rng.normal(size=(L, 2)), rng.normal(size=(4, 2))
    obs, offset = rng.normal(size=cfg.obs_dim), int(rng.integers(cfg.temporal_period))
    records, _ = _forward_records(params, cfg, history, targets, obs, 5, offset)
    worst = 0.0
    for cached in range(0, L, C):
        extracted = extract_uncached_kv(history[cached:], obs, offset, params, cfg)
        for (_, k, v), block in zip(records, extracted):
            worst = max(worst, float(np.max(np.abs(k.data[cached:L] - block.keys))),
                        float(np.max(np.abs(v.data[cached:L] - block.values))))
        if cached:
            prefix = extract_uncached_kv(history[:cached], obs, offset, params, cfg, start=0)
            for (_, k, v), block in zip(records, prefix):
                worst = max(worst, float(np.max(np.abs(k.data[:cached] - block.keys))),
                            float(np.max(np.abs(v.data[:cached] - block.values))))
    return worst <= 1e-10, f"max |diff| {worst:.2e}"


def check_cache_eviction(rng: np.random.Generator) -> Tuple[bool, str]:
    P, H, dh, C, L = 2, 2, 3, 2, 8
    cache = KVCache(P, H, dh, L, C)
    chunks = [[(rng.normal(size=(C, H * dh)), rng.normal(size=(C, H * dh))) for _ in range(P)] for _ in range(7)]
    for chunk in chunks:
        cache.append(chunk)
    keys, _ = cache.window(1, L)
    expected = np.concatenate([c[1][0] for c in chunks[-L // C:]], axis=0)
    ok = cache.l == L and np.array_equal(keys, expected) and cache.num_scalars() == P * 2 * L * H * dh
    return bool(ok), f"holds the last {L // C} chunks, {cache.num_scalars()} scalars"


def check_cache_equivalence(rng: np.random.Generator, n_configs: int = 3, ar_steps: int = 12) -> Tuple[bool, str]:
    worst = 0.0
    for _ in range(n_configs):
        C = int(rng.choice([2, 4, 8]))
        L = int(rng.choice([x for x in (8, 16, 32) if x % C == 0]))
        M = int(rng.choice([m for m in (4, 12) if m >= C] or [C]))
        cfg = tiny_config(history_len=L, chunk=C, target_len=M, n_blocks=2, d_model=16,
                          num_steps=int(rng.integers(3, 8)))
        params = random_params(cfg, rng, gain=5.0)
        observations = rng.normal(size=(ar_steps, cfg.obs_dim))
        seed = int(rng.integers(1 << 30))
        n_seeded = int(rng.integers(0, L + 1))
        seed_history = rng.normal(size=(n_seeded, 2)) if n_seeded else None
        runs = []
        for use_cache in (True, False):
            session = init_session(cfg, seed_history=seed_history, rng=np.random.default_rng(seed),
                                   use_cache=use_cache)
            runs.append(np.stack([ar_step(session, o, params) for o in observations]))
        worst = max(worst, float(np.max(np.abs(runs[0] - runs[1]))))
    return worst <= 1e-6, f"{n_configs} configs x {ar_steps} AR steps, max |diff| {worst:.2e}"


def check_checkpoint_round_trip(rng: np.random.Generator) -> Tuple[bool, str]:
    cfg = tiny_config()
    params = init_params(cfg, rng, np.float32)
    tensors = {k: t.data for k, t in params.items()}
    blob = encode_checkpoint(cfg.to_dict(), {"action": {"low": [0.0], "high": [1.0]}}, tensors)
    again = decode_checkpoint(blob)
    same_bytes = encode_checkpoint(again.config, again.stats, again.tensors) == blob
    same_tensors = all(np.array_equal(tensors[k], again.tensors[k]) for k in tensors)
    return same_bytes and same_tensors, f"{len(tensors)} tensors, {len(blob)} bytes"


# ---------------------------------------------------------------------------

def run_verify(quick: bool = True, seed: int = 0,
               training_builder: MaskBuilder = build_training_mask,
               inference_builder: MaskBuilder = build_inference_mask) -> VerifyReport:
    """
    Run every property and log one line each.

    Args:
        quick: Smaller gradient and equivalence sweeps
        seed: Seed for all random inputs
        training_builder, inference_builder: Mask builders under test
    """
    rng = np.random.default_rng(seed)
    properties = [
        ("mask_oracle", lambda: check_mask_oracle(training_builder, inference_builder)),
        ("inference_mask_rows", check_inference_is_training_minus_rows),
        ("softmax_rows", lambda: check_softmax_rows(rng)),
        ("kernel_gradients", lambda: check_kernel_gradients(rng)),
        ("model_gradients", lambda: check_model_gradients(rng, batches=1 if quick else 5,
                                                          max_entries=4 if quick else None)),
        ("schedule_invariants", check_schedule_invariants),
        ("schedule_round_trip", lambda: check_schedule_round_trip(rng)),
        ("q_sample_zero_signal", lambda: check_q_sample_zero_signal(rng)),
        ("temporal_wraparound", lambda: check_temporal_wraparound(rng)),
        ("kv_timestep_invariance", lambda: check_kv_timestep_invariance(rng)),
        ("causality", lambda: check_causality(rng)),
        ("chunk_isolation", lambda: check_chunk_isolation(rng)),
        ("extraction_matches_forward", lambda: check_extraction_matches_forward(rng)),
        ("cache_eviction", lambda: check_cache_eviction(rng)),
        ("cache_equivalence", lambda: check_cache_equivalence(rng, 3 if quick else 20, 12 if quick else 50)),
        ("checkpoint_round_trip", lambda: check_checkpoint_round_trip(rng)),
    ]

    report = VerifyReport()
    for name, check in properties:
        try:
            passed, detail = check()
        except CDPError as e:
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        report.results.append(PropertyResult(name, bool(passed), detail))
        if passed:
            logger.info(f"✅ {name}: {detail}")
        else:
            logger.error(f"❌ {name}: {detail}")
    logger.info(f"📊 {len(report.results) - len(report.failed())}/{len(report.results)} properties passed")
    return report
