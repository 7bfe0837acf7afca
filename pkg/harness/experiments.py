"""
Variant sweeps: history conditioning under observation noise, the
history-perturbation scale and the window geometry
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from config.run_config import RunConfig
from envs.demos import gen_demos
from harness.evaluate import LoadedModel, NoiseLevelResult, evaluate, results_json
from training.run import train_run

logger = logging.getLogger(__name__)

DEGRADATION_NOISE = (0.0, 0.05, 0.1)
SIGMA_SWEEP = (1.0 / 6.0, 1e-6)
# (history_len, target_len, chunk); valid_len follows chunk
GEOMETRY_SWEEP = ((16, 12, 8), (16, 12, 4), (8, 12, 8), (32, 12, 8), (16, 16, 8))


@dataclass
class VariantResult:
    name: str
    overrides: dict
    rows: List[NoiseLevelResult]

    def success_at(self, noise_scale: float) -> float:
        for row in self.rows:
            if np.isclose(row.noise_scale, noise_scale):
                return row.success_rate
        raise KeyError(noise_scale)

    def success_drop(self) -> float:
        """Success at the lowest noise level minus success at the highest."""
        ordered = sorted(self.rows, key=lambda r: r.noise_scale)
        return ordered[0].success_rate - ordered[-1].success_rate

    def to_dict(self) -> dict:
        return {"overrides": self.overrides, "results": results_json(self.rows),
                "success_drop": self.success_drop()}


def compare_variants(base: RunConfig, variants: Dict[str, dict], out_dir: Union[str, Path],
                     noise_levels: Sequence[float], seeds: Sequence[int], n_episodes: Optional[int] = None,
                     n_demos: int = 200, workers: int = 1) -> List[VariantResult]:
    """
    Train every variant on the same demos with the same budget, then evaluate
    each one over seeds and noise levels.

    Args:
        base: Shared run configuration
        variants: name -> RunConfig overrides
        out_dir: Demos, checkpoints and metrics land here
        noise_levels: Observation noise scales to evaluate
        seeds: Evaluation seeds
        n_episodes: Episodes per seed and noise level (base.eval_episodes if None)
        n_demos: Scripted demonstrations shared by every variant
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    min_length = max([base.target_len] + [base.with_overrides(**o).target_len for o in variants.values()])
    demos = gen_demos(base.task, n_demos, base.seed, min_length=min_length, max_steps=base.max_steps)
    n_episodes = n_episodes or base.eval_episodes

    results = []
    for name, overrides in variants.items():
        run_cfg = base.with_overrides(**overrides).validate()
        logger.info(f"🚀 Variant {name}: {overrides}")
        checkpoint = out_dir / f"{name}.ckpt"
        train_run(run_cfg, demos, checkpoint, metrics_path=out_dir / f"{name}_metrics.csv")
        model = LoadedModel.from_checkpoint(checkpoint, np.dtype(run_cfg.precision))
        factory = model.policy_factory(use_cache=run_cfg.use_cache, stochastic=run_cfg.stochastic_sampling,
                                       stride=run_cfg.inference_stride)
        rows = evaluate(run_cfg.task, factory, noise_levels, seeds, n_episodes, run_cfg.max_steps,
                        run_cfg.dropout_prob, workers)
        results.append(VariantResult(name, overrides, rows))
    return results


def sweep_degradation(base: RunConfig, out_dir: Union[str, Path],
                      noise_levels: Sequence[float] = DEGRADATION_NOISE, seeds: Sequence[int] = (0, 1, 2),
                      n_episodes: Optional[int] = None, n_demos: int = 200, workers: int = 1) -> dict:
    """History-conditioned policy against the L=0 ablation."""
    variants = {"history": {}, "no_history": {"history_len": 0}}
    results = compare_variants(base, variants, out_dir, noise_levels, seeds, n_episodes, n_demos, workers)
    report = {r.name: r.to_dict() for r in results}
    with_history, without = results
    top = max(noise_levels)
    report["history_holds_up"] = bool(
        with_history.success_at(top) >= without.success_at(top)
        and with_history.success_drop() <= without.success_drop())
    logger.info(f"📊 At noise {top:g}: history {with_history.success_at(top):.3f}, "
                f"no history {without.success_at(top):.3f}")
    return report


def sweep_sigma(base: RunConfig, out_dir: Union[str, Path], sigmas: Sequence[float] = SIGMA_SWEEP,
                noise_levels: Sequence[float] = (0.0,), seeds: Sequence[int] = (0, 1, 2),
                n_episodes: Optional[int] = None, n_demos: int = 200, workers: int = 1) -> dict:
    """Same data and budget, different history perturbation scales."""
    variants = {f"sigma_{s:.6g}": {"sigma": float(s)} for s in sigmas}
    results = compare_variants(base, variants, out_dir, noise_levels, seeds, n_episodes, n_demos, workers)
    report = {r.name: r.to_dict() for r in results}
    for r in results:
        mean = float(np.mean([row.success_rate for row in r.rows]))
        logger.info(f"📊 {r.name}: mean success {mean:.3f}")
    return report


def geometry_variants(geometries: Sequence[Sequence[int]]) -> Dict[str, dict]:
    """name -> overrides for each (history_len, target_len, chunk)."""
    variants = {}
    for history_len, target_len, chunk in geometries:
        variants[f"L{history_len}_M{target_len}_C{chunk}"] = {
            "history_len": int(history_len), "target_len": int(target_len),
            "chunk": int(chunk), "valid_len": int(chunk)}
    return variants


def sweep_geometry(base: RunConfig, out_dir: Union[str, Path],
                   geometries: Sequence[Sequence[int]] = GEOMETRY_SWEEP,
                   noise_levels: Sequence[float] = (0.0,), seeds: Sequence[int] = (0, 1, 2),
                   n_episodes: Optional[int] = None, n_demos: int = 200, workers: int = 1) -> dict:
    """Same data and budget across chunk sizes and history/target window lengths."""
    results = compare_variants(base, geometry_variants(geometries), out_dir, noise_levels, seeds,
                               n_episodes, n_demos, workers)
    report = {r.name: r.to_dict() for r in results}
    means = {r.name: float(np.mean([row.success_rate for row in r.rows])) for r in results}
    for name, mean in means.items():
        logger.info(f"📊 {name}: mean success {mean:.3f}")
    report["best"] = max(means, key=means.get)
    return report
