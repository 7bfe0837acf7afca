#!/usr/bin/env python3
"""
Test script for policy geometry and the chunked causal attention masks
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from harness.verify import brute_force_visible, check_mask_oracle, mask_geometries
from policy.errors import DegenerateRowError, GeometryError
from policy.geometry import PolicyGeometry
from policy.masking import AttentionMask, build_inference_mask, build_training_mask


def test_geometry_validation():
    print("🧪 Testing geometry validation")
    geom = PolicyGeometry(16, 12, 8, 8)
    assert geom.total_len == 28 and geom.redundant_len == 4 and geom.num_chunks == 2
    for bad in [(10, 12, 4, 4),   # chunk does not divide L
                (16, 6, 8, 8),    # valid > M
                (16, 12, 4, 8),   # valid != chunk
                (16, 12, 8, 0)]:  # chunk < 1
        with pytest.raises(GeometryError):
            PolicyGeometry(*bad)
    with pytest.raises(GeometryError):
        geom.with_cached(4)
    with pytest.raises(GeometryError):
        geom.with_cached(24)


def test_error_carries_field_name():
    with pytest.raises(GeometryError) as err:
        PolicyGeometry(10, 12, 4, 4)
    assert err.value.field == "chunk"


def test_training_mask_small_case():
    """L=4, C=2, M=2: two 2x2 history blocks, target rows fully visible."""
    print("🧪 Testing the L=4 C=2 M=2 mask")
    mask = build_training_mask(PolicyGeometry(4, 2, 2, 2))
    expected = np.array([
        [1, 1, 0, 0, 0, 0],
        [1, 1, 0, 0, 0, 0],
        [0, 0, 1, 1, 0, 0],
        [0, 0, 1, 1, 0, 0],
        [1, 1, 1, 1, 1, 1],
        [1, 1, 1, 1, 1, 1],
    ], dtype=bool)
    np.testing.assert_array_equal(mask.visible, expected)


def test_no_history_mask_is_full():
    mask = build_training_mask(PolicyGeometry(0, 6, 2, 2))
    assert mask.visible.shape == (6, 6) and mask.visible.all()


def test_history_never_sees_targets():
    for geom in mask_geometries(8, 4):
        L = geom.history_len
        mask = build_training_mask(geom)
        assert not mask.visible[:L, L:].any()
        assert mask.visible[L:].all()


def test_masks_match_rule_evaluator():
    print("🧪 Testing masks against the brute-force rule evaluator")
    ok, detail = check_mask_oracle()
    print(f"📊 {detail}")
    assert ok, detail


def test_inference_mask_is_training_mask_minus_cached_rows():
    print("🧪 Testing inference mask rows")
    geom = PolicyGeometry(12, 8, 4, 4)
    full = build_training_mask(geom)
    for l in (0, 4, 8, 12):
        mask = build_inference_mask(geom.with_cached(l))
        assert mask.visible.shape == (geom.total_len - l, geom.total_len)
        assert mask == full.drop_rows(l)


def test_corrupted_rule_fails_oracle():
    """Letting history rows see the targets must be caught."""
    print("🧪 Testing the oracle against a corrupted mask rule")

    def leaky(geom):
        visible = build_training_mask(geom).visible.copy()
        visible[:geom.history_len, geom.history_len:] = True
        return AttentionMask(visible)

    ok, detail = check_mask_oracle(training_builder=leaky)
    assert not ok
    assert "training mask differs" in detail


def test_degenerate_row_rejected():
    with pytest.raises(DegenerateRowError):
        AttentionMask(np.array([[True, False], [False, False]]))


def test_brute_force_rule():
    geom = PolicyGeometry(4, 2, 2, 2)
    assert brute_force_visible(1, 0, geom)
    assert not brute_force_visible(1, 2, geom)
    assert not brute_force_visible(3, 4, geom)
    assert brute_force_visible(5, 0, geom)


def main():
    """Run all masking tests."""
    print("🚀 Masking tests")
    print("=" * 60)
    tests = [
        test_geometry_validation,
        test_error_carries_field_name,
        test_training_mask_small_case,
        test_no_history_mask_is_full,
        test_history_never_sees_targets,
        test_masks_match_rule_evaluator,
        test_inference_mask_is_training_mask_minus_cached_rows,
        test_corrupted_rule_fails_oracle,
        test_degenerate_row_rejected,
        test_brute_force_rule,
    ]
    for test in tests:
        test()
        print(f"✅ {test.__name__}")
    print("🏁 All masking tests passed")


if __name__ == "__main__":
    main()
