#!/usr/bin/env python3
"""
Test script for the command line: exit codes and the files each command writes
"""

import argparse
import csv
import json
import os
import sys
import tempfile
from pathlib import Path

import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from harness.experiments import geometry_variants
from main import EXIT_OK, EXIT_PROPERTY_FAILURE, EXIT_USAGE, cmd_verify, main
from policy.masking import AttentionMask, build_training_mask

TINY_MODEL = ["--task", "reach2d", "--history-len", "4", "--chunk", "2", "--target-len", "4",
              "--d-model", "16", "--n-heads", "2", "--n-blocks", "1", "--d-ff", "32", "--num-steps", "10"]


def _gen(path: Path, n: int = 4, seed: int = 0) -> int:
    return main(["gen-demos", "--task", "reach2d", "--n", str(n), "--seed", str(seed),
                 "--min-length", "4", "--out", str(path)])


def test_gen_demos_is_deterministic():
    print("🧪 Testing gen-demos")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        assert _gen(tmp / "a.jsonl") == EXIT_OK
        assert _gen(tmp / "b.jsonl") == EXIT_OK
        assert (tmp / "a.jsonl").read_bytes() == (tmp / "b.jsonl").read_bytes()
        assert _gen(tmp / "c.jsonl", n=0) == EXIT_USAGE


def test_verify_passes():
    print("🧪 Testing verify")
    assert main(["verify", "--seed", "0"]) == EXIT_OK


def test_verify_flags_a_leaky_mask():
    def leaky(geom):
        visible = build_training_mask(geom).visible.copy()
        visible[:geom.history_len, geom.history_len:] = True
        return AttentionMask(visible)

    args = argparse.Namespace(thorough=False, seed=0)
    assert cmd_verify(args, mask_builder=leaky) == EXIT_PROPERTY_FAILURE


def test_train_eval_bench_pipeline():
    print("🧪 Testing train -> eval -> bench-cache")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        assert _gen(tmp / "demos.jsonl", n=6) == EXIT_OK
        code = main(["train", *TINY_MODEL, "--epochs", "2", "--batch-size", "16", "--lr", "3e-3",
                     "--seed", "0", "--precision", "float64", "--demos", str(tmp / "demos.jsonl"),
                     "--out", str(tmp / "model.ckpt"), "--metrics", str(tmp / "metrics.csv")])
        assert code == EXIT_OK
        assert (tmp / "model.ckpt").exists()
        assert len((tmp / "metrics.csv").read_text().strip().splitlines()) == 3

        code = main(["eval", "--checkpoint", str(tmp / "model.ckpt"), "--episodes", "2", "--max-steps", "20",
                     "--seeds", "0", "--noise", "0", "--noise", "0.1", "--workers", "1",
                     "--out", str(tmp / "results.json"), "--log-dir", str(tmp / "logs")])
        assert code == EXIT_OK
        report = json.loads((tmp / "results.json").read_text())
        assert report["task"] == "reach2d"
        assert report["policy"] == "diffusion(L=4)"
        assert sorted(report["results"]) == ["0", "0.1"]
        assert 0.0 <= report["results"]["0"]["success_rate"] <= 1.0
        assert (tmp / "logs" / "rollout.jsonl").exists()
        with open(tmp / "logs" / "timing.csv") as f:
            assert next(csv.reader(f)) == ["ar_step", "kv_extract_ms", "denoise_ms", "cache_len"]

        code = main(["bench-cache", "--checkpoint", str(tmp / "model.ckpt"), "--ar-steps", "3",
                     "--out", str(tmp / "bench.csv")])
        assert code == EXIT_OK
        with open(tmp / "bench.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["L", "cached_ms", "uncached_ms", "speedup"]
        assert rows[1][0] == "4" and len(rows) == 2


def test_expert_eval_to_stdout(capsys):
    code = main(["eval", "--expert", "--task", "reach2d", "--episodes", "2", "--max-steps", "60",
                 "--seeds", "0", "--workers", "1"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["policy"] == "expert"
    assert report["results"]["0"]["success_rate"] == 1.0


def test_bench_cache_random_weights():
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "bench.csv"
        code = main(["bench-cache", "--random-weights", "--history-lens", "2", "4", "--chunk", "2",
                     "--target-len", "4", "--d-model", "16", "--n-heads", "2", "--n-blocks", "1",
                     "--num-steps", "5", "--ar-steps", "3", "--out", str(out)])
        assert code == EXIT_OK
        assert len(out.read_text().strip().splitlines()) == 3


def test_sweep_geometry_reports_each_variant():
    print("🧪 Testing sweep-geometry")
    assert geometry_variants([(8, 12, 4)]) == {
        "L8_M12_C4": {"history_len": 8, "target_len": 12, "chunk": 4, "valid_len": 4}}
    with tempfile.TemporaryDirectory() as tmp:
        out_dir = Path(tmp) / "geometry"
        code = main(["sweep-geometry", "--task", "reach2d", "--d-model", "16", "--n-heads", "2",
                     "--n-blocks", "1", "--d-ff", "32", "--num-steps", "5", "--epochs", "1",
                     "--batch-size", "16", "--precision", "float64", "--max-steps", "30",
                     "--episodes", "1", "--seeds", "0", "--workers", "1", "--n-demos", "4",
                     "--geometry", "4", "4", "2", "--geometry", "2", "4", "2",
                     "--out-dir", str(out_dir)])
        assert code == EXIT_OK
        report = json.loads((out_dir / "summary.json").read_text())
    assert report["best"] in ("L4_M4_C2", "L2_M4_C2")
    for name in ("L4_M4_C2", "L2_M4_C2"):
        assert 0.0 <= report[name]["results"]["0"]["success_rate"] <= 1.0
        assert report[name]["overrides"]["chunk"] == 2


def test_usage_errors():
    print("🧪 Testing usage exit codes")
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        _gen(tmp / "demos.jsonl")
        # chunk must divide the history length
        code = main(["train", "--task", "reach2d", "--history-len", "6", "--chunk", "4",
                     "--demos", str(tmp / "demos.jsonl"), "--out", str(tmp / "x.ckpt")])
        assert code == EXIT_USAGE
        assert main(["eval", "--checkpoint", str(tmp / "missing.ckpt")]) == EXIT_USAGE
        assert main(["eval"]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def main_runner():
    """Run all CLI tests."""
    print("🚀 Command line tests")
    print("=" * 60)
    tests = [
        test_gen_demos_is_deterministic,
        test_verify_passes,
        test_verify_flags_a_leaky_mask,
        test_train_eval_bench_pipeline,
        test_bench_cache_random_weights,
        test_sweep_geometry_reports_each_variant,
        test_usage_errors,
    ]
    for test in tests:
        test()
        print(f"✅ {test.__name__}")
    print("🏁 All command line tests passed")


if __name__ == "__main__":
    main_runner()
