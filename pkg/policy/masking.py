"""
Chunked causal temporal attention masks
History actions see only their own chunk; denoising targets see everything.
"""

from dataclasses import dataclass

import numpy as np

from numkernel.ops import MASK_BLOCKED
from policy.errors import DegenerateRowError, GeometryError
from policy.geometry import PolicyGeometry


@dataclass(frozen=True)
class AttentionMask:
    """Boolean visibility matrix; rows are queries, columns are keys."""

    visible: np.ndarray

    def __post_init__(self):
        self.visible.setflags(write=False)
        if self.visible.size and not self.visible.any(axis=1).all():
            raise DegenerateRowError("attention mask has a fully blocked row")

    @property
    def rows(self) -> int:
        return self.visible.shape[0]

    @property
    def cols(self) -> int:
        return self.visible.shape[1]

    def additive(self, dtype=np.float64) -> np.ndarray:
        return np.where(self.visible, 0.0, MASK_BLOCKED).astype(dtype)

    def drop_rows(self, n: int) -> "AttentionMask":
        return AttentionMask(self.visible[n:].copy())

    def take(self, rows: slice, cols: slice) -> "AttentionMask":
        return AttentionMask(self.visible[rows, cols].copy())

    def __eq__(self, other) -> bool:
        return isinstance(other, AttentionMask) and np.array_equal(self.visible, other.visible)

    def __hash__(self):
        return hash(self.visible.tobytes())


def _visibility_rows(positions: np.ndarray, geom: PolicyGeometry) -> np.ndarray:
    """Visibility of global row positions against all L+M columns."""
    L, C = geom.history_len, geom.chunk
    cols = np.arange(geom.total_len)
    is_history_row = positions < L
    same_chunk = (positions[:, None] // C) == (cols[None, :] // C)
    history_visible = same_chunk & (cols[None, :] < L)
    return np.where(is_history_row[:, None], history_visible, True)


def build_training_mask(geom: PolicyGeometry) -> AttentionMask:
    """(L+M) x (L+M) mask for a full training sequence."""
    if geom.history_len % geom.chunk:
        raise GeometryError(f"chunk {geom.chunk} does not divide history_len {geom.history_len}")
    return AttentionMask(_visibility_rows(np.arange(geom.total_len), geom))


def build_inference_mask(geom: PolicyGeometry) -> AttentionMask:
    """
    (L-l+M) x (L+M) mask for one denoising pass.
    Rows are the uncached history followed by the targets; columns cover the
    cached history, the uncached history and the targets.
    """
    if geom.cached_len % geom.chunk:
        raise GeometryError(f"chunk {geom.chunk} does not divide cached_len {geom.cached_len}")
    positions = np.arange(geom.cached_len, geom.total_len)
    return AttentionMask(_visibility_rows(positions, geom))
