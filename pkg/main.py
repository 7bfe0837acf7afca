#!/usr/bin/env python3
"""
Causal Diffusion Policy - Command Line
Demo generation, training, evaluation, cache benchmark, property suite and sweeps
"""

import argparse
import json
import logging
import sys
from functools import partial
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from config.run_config import PRESETS, RunConfig, resolve_config
from config.seeding import stream_rng
from config.settings import RolloutSettings, Settings
from envs import make_env
from envs.degrade import DegradeSpec
from envs.demos import gen_demos
from harness.bench import bench_cache, bench_params, write_bench_csv
from harness.evaluate import LoadedModel, evaluate, expert_factory, results_json
from harness.experiments import GEOMETRY_SWEEP, sweep_degradation, sweep_geometry, sweep_sigma
from harness.verify import run_verify
from policy.errors import CDPError
from rollout.runner import run_episode, write_timing_csv
from training.dataset import read_episodes, write_episodes
from training.run import train_run

logging.basicConfig(
    level=getattr(logging, Settings.LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY_FAILURE = 1
EXIT_USAGE = 2

# CLI flag -> RunConfig field, for flags that override the config file
CONFIG_FLAGS = {
    "task": "task", "history_len": "history_len", "target_len": "target_len", "chunk": "chunk",
    "d_model": "d_model", "n_heads": "n_heads", "n_blocks": "n_blocks", "d_ff": "d_ff",
    "num_steps": "num_steps", "sigma": "sigma", "batch_size": "batch_size", "epochs": "epochs",
    "lr": "learning_rate", "seed": "seed", "precision": "precision", "episodes": "eval_episodes",
    "max_steps": "max_steps", "dropout": "dropout_prob", "stride": "inference_stride",
}


def _resolved(args) -> RunConfig:
    overrides = {field: getattr(args, flag, None) for flag, field in CONFIG_FLAGS.items()}
    # chunk doubles as the executed prefix
    if overrides.get("chunk") is not None:
        overrides["valid_len"] = overrides["chunk"]
    if getattr(args, "no_cache", False):
        overrides["use_cache"] = False
    if getattr(args, "stochastic", False):
        overrides["stochastic_sampling"] = True
    return resolve_config(getattr(args, "config", None), getattr(args, "preset", None), **overrides)


def _write_json(path: str, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True))
    logger.info(f"💾 Wrote {path}")
    return path


def cmd_gen_demos(args) -> int:
    logger.info(f"⚙️ gen-demos: task={args.task} n={args.n} seed={args.seed} out={args.out}")
    episodes = gen_demos(args.task, args.n, args.seed, min_length=args.min_length, max_steps=args.max_steps)
    write_episodes(args.out, episodes)
    logger.info(f"✅ Wrote {len(episodes)} demos to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run_cfg = _resolved(args)
    episodes = read_episodes(args.demos)
    train_run(run_cfg, episodes, args.out, metrics_path=args.metrics, resume_path=args.resume)
    return EXIT_OK


def cmd_eval(args) -> int:
    noise_levels = args.noise or [0.0]
    seeds = args.seeds or [Settings.SEED]
    if args.expert:
        run_cfg = _resolved(args)
        factory = expert_factory(run_cfg.task)
        policy_name = "expert"
    else:
        if not args.checkpoint:
            logger.error("❌ --checkpoint is required unless --expert is given")
            return EXIT_USAGE
        model = LoadedModel.from_checkpoint(args.checkpoint, np.dtype(args.precision or Settings.PRECISION))
        if args.task is None:
            args.task = model.run.get("task")
        run_cfg = _resolved(args)
        factory = model.policy_factory(use_cache=run_cfg.use_cache, stochastic=run_cfg.stochastic_sampling,
                                       stride=run_cfg.inference_stride)
        policy_name = f"diffusion(L={model.cfg.geometry.history_len})"

    rows = evaluate(run_cfg.task, factory, noise_levels, seeds, run_cfg.eval_episodes, run_cfg.max_steps,
                    run_cfg.dropout_prob, args.workers)
    report = {"task": run_cfg.task, "policy": policy_name, "seeds": list(seeds),
              "episodes": run_cfg.eval_episodes, "results": results_json(rows)}
    if args.out:
        _write_json(args.out, report)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))

    if args.log_dir:
        log_dir = Path(args.log_dir)
        result = run_episode(make_env(run_cfg.task), factory(), run_cfg.max_steps,
                             DegradeSpec(noise_levels[0], run_cfg.dropout_prob),
                             rng=stream_rng(seeds[0], "eval", 0), policy_rng=stream_rng(seeds[0], "noise", 0))
        write_episodes(log_dir / "rollout.jsonl", [result.episode])
        write_timing_csv(log_dir / "timing.csv", result.timings)
        logger.info(f"📝 Rollout log in {log_dir} ({result.steps} steps, success={result.success})")
    return EXIT_OK


def cmd_bench_cache(args) -> int:
    logger.info(f"⚙️ bench-cache: history_lens={args.history_lens} ar_steps={args.ar_steps} seed={args.seed}")
    if args.checkpoint:
        model = LoadedModel.from_checkpoint(args.checkpoint, np.dtype(args.precision or Settings.PRECISION))
        rows = [bench_params(model.params, model.cfg, args.ar_steps, args.seed)]
    else:
        if not args.random_weights:
            logger.info("ℹ️ No checkpoint given, benchmarking random weights")
        rows = bench_cache(args.history_lens, chunk=args.chunk, target_len=args.target_len,
                           d_model=args.d_model, n_heads=args.n_heads, n_blocks=args.n_blocks,
                           num_steps=args.num_steps, ar_steps=args.ar_steps, seed=args.seed,
                           dtype=np.dtype(args.precision or Settings.PRECISION))
    write_bench_csv(args.out, rows)
    worst = max(r.max_abs_diff for r in rows)
    if worst > 1e-3:
        logger.warning(f"⚠️ Cached and recomputed actions differ by up to {worst:.2e}")
    logger.info(f"✅ Benchmark written to {args.out}")
    return EXIT_OK


def cmd_verify(args, mask_builder: Optional[Callable] = None) -> int:
    logger.info(f"⚙️ verify: thorough={args.thorough} seed={args.seed}")
    builders = {}
    if mask_builder is not None:
        builders["training_builder"] = mask_builder
    report = run_verify(quick=not args.thorough, seed=args.seed, **builders)
    if not report.passed:
        logger.error(f"❌ Failing properties: {report.failed()}")
        return EXIT_PROPERTY_FAILURE
    logger.info(f"✅ All {len(report.results)} properties passed")
    return EXIT_OK


def _cmd_sweep(args, sweep) -> int:
    run_cfg = _resolved(args)
    options = dict(seeds=args.seeds or [0, 1, 2], n_episodes=args.episodes, n_demos=args.n_demos,
                   workers=args.workers)
    if args.noise:
        options["noise_levels"] = args.noise
    report = sweep(run_cfg, args.out_dir, **options)
    _write_json(Path(args.out_dir) / "summary.json", report)
    return EXIT_OK


def cmd_sweep_degradation(args) -> int:
    return _cmd_sweep(args, sweep_degradation)


def cmd_sweep_sigma(args) -> int:
    return _cmd_sweep(args, sweep_sigma)


def cmd_sweep_geometry(args) -> int:
    geometries = [tuple(g) for g in args.geometry] if args.geometry else GEOMETRY_SWEEP
    return _cmd_sweep(args, partial(sweep_geometry, geometries=geometries))


def _add_config_flags(parser, eval_only: bool = False):
    parser.add_argument('--config', type=str, help='Run configuration JSON file')
    parser.add_argument('--preset', choices=sorted(PRESETS), help='Start from a named preset')
    parser.add_argument('--task', type=str, help='Task name (reach2d, pusht_lite)')
    parser.add_argument('--seed', type=int, help='Master seed')
    parser.add_argument('--precision', choices=['float32', 'float64'], help='Parameter precision')
    parser.add_argument('--episodes', type=int, help='Evaluation episodes per seed and noise level')
    parser.add_argument('--max-steps', type=int, help='Env tick budget per episode')
    parser.add_argument('--dropout', type=float, help='Observation dropout probability')
    parser.add_argument('--stride', type=int, help='Reverse-chain timestep stride')
    if eval_only:
        return
    parser.add_argument('--history-len', type=int, help='L, executed actions conditioning each step')
    parser.add_argument('--target-len', type=int, help='M, denoising targets per step')
    parser.add_argument('--chunk', type=int, help='C, chunk size and executed prefix')
    parser.add_argument('--d-model', type=int)
    parser.add_argument('--n-heads', type=int)
    parser.add_argument('--n-blocks', type=int)
    parser.add_argument('--d-ff', type=int)
    parser.add_argument('--num-steps', type=int, help='Diffusion steps T')
    parser.add_argument('--sigma', type=float, help='History perturbation scale')
    parser.add_argument('--batch-size', type=int)
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--lr', type=float, help='Peak learning rate')


def build_parser():
    parser = argparse.ArgumentParser(description='Causal Diffusion Policy')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-demos', help='Generate scripted expert demonstrations')
    p.add_argument('--task', required=True, type=str)
    p.add_argument('--n', required=True, type=int, help='Number of successful episodes')
    p.add_argument('--seed', type=int, default=Settings.SEED)
    p.add_argument('--out', required=True, type=str, help='Output JSON-lines file')
    p.add_argument('--min-length', type=int, default=1, help='Shortest episode kept')
    p.add_argument('--max-steps', type=int, default=RolloutSettings.MAX_STEPS)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser('train', help='Train a policy on demonstrations')
    _add_config_flags(p)
    p.add_argument('--demos', required=True, type=str, help='Demo JSON-lines file')
    p.add_argument('--out', required=True, type=str, help='Checkpoint path')
    p.add_argument('--metrics', type=str, help='Epoch metrics CSV')
    p.add_argument('--resume', type=str, help='Checkpoint to continue from')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('eval', help='Closed-loop success rates')
    _add_config_flags(p, eval_only=True)
    p.add_argument('--checkpoint', type=str)
    p.add_argument('--expert', action='store_true', help='Evaluate the scripted expert instead')
    p.add_argument('--noise', type=float, action='append', help='Observation noise scale (repeatable)')
    p.add_argument('--seeds', type=int, nargs='+', help='Evaluation seeds')
    p.add_argument('--no-cache', action='store_true', help='Recompute history features every pass')
    p.add_argument('--stochastic', action='store_true', help='Sample with posterior noise')
    p.add_argument('--workers', type=int, default=Settings.EVAL_WORKERS)
    p.add_argument('--out', type=str, help='Results JSON (stdout if omitted)')
    p.add_argument('--log-dir', type=str, help='Write one rollout log and its timing CSV here')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('bench-cache', help='Per-AR-step latency with and without the K/V cache')
    p.add_argument('--checkpoint', type=str)
    p.add_argument('--random-weights', action='store_true')
    p.add_argument('--history-lens', type=int, nargs='+', default=RolloutSettings.BENCH_HISTORY_SWEEP)
    p.add_argument('--chunk', type=int, default=8)
    p.add_argument('--target-len', type=int, default=12)
    p.add_argument('--d-model', type=int, default=128)
    p.add_argument('--n-heads', type=int, default=4)
    p.add_argument('--n-blocks', type=int, default=4)
    p.add_argument('--num-steps', type=int, default=50)
    p.add_argument('--ar-steps', type=int, default=RolloutSettings.BENCH_AR_STEPS)
    p.add_argument('--seed', type=int, default=Settings.SEED)
    p.add_argument('--precision', choices=['float32', 'float64'])
    p.add_argument('--out', type=str, default=str(Path(Settings.DATA_DIR) / 'bench_cache.csv'))
    p.set_defaults(func=cmd_bench_cache)

    p = sub.add_parser('verify', help='Run the property suite')
    p.add_argument('--thorough', action='store_true', help='Full gradient and equivalence sweeps')
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_verify)

    for name, func, help_text in (
            ('sweep-degradation', cmd_sweep_degradation, 'History vs no-history under observation noise'),
            ('sweep-sigma', cmd_sweep_sigma, 'History perturbation scale ablation'),
            ('sweep-geometry', cmd_sweep_geometry, 'Chunk size and window length ablation')):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.add_argument('--out-dir', required=True, type=str)
        p.add_argument('--n-demos', type=int, default=200)
        p.add_argument('--noise', type=float, action='append')
        p.add_argument('--seeds', type=int, nargs='+')
        p.add_argument('--workers', type=int, default=Settings.EVAL_WORKERS)
        if name == 'sweep-geometry':
            p.add_argument('--geometry', type=int, nargs=3, action='append', metavar=('L', 'M', 'C'),
                           help='History length, target length and chunk of one variant')
        p.set_defaults(func=func)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not Settings.validate_config():
        return EXIT_USAGE

    try:
        return args.func(args)
    except KeyboardInterrupt:
        logger.info("⏹️ Stopped by user")
        return EXIT_USAGE
    except (CDPError, FileNotFoundError) as e:
        logger.error(f"❌ Error in {args.command}: {e}")
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"❌ Unexpected error in {args.command}: {e}")
        raise


if __name__ == "__main__":
    sys.exit(main())
