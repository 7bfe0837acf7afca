"""
Policy geometry: history / target / chunk bookkeeping
"""

from dataclasses import dataclass, replace

from policy.errors import GeometryError


@dataclass(frozen=True)
class PolicyGeometry:
    """
    Lengths that shape masks, caches and rollouts.

    history_len (L): historical actions conditioning each prediction
    target_len (M): denoising targets per AR step
    valid_len (M_valid): executed prefix of the targets
    chunk (C): history chunk size; one chunk is executed per AR step
    cached_len (l): history actions whose K/V are already cached (inference only)
    """

    history_len: int
    target_len: int
    valid_len: int
    chunk: int
    cached_len: int = 0

    def __post_init__(self):
        if self.chunk < 1:
            raise GeometryError(f"chunk must be >= 1, got {self.chunk}", "chunk")
        if self.history_len < 0:
            raise GeometryError(f"history_len must be >= 0, got {self.history_len}", "history_len")
        if self.target_len < 1:
            raise GeometryError(f"target_len must be >= 1, got {self.target_len}", "target_len")
        if self.history_len % self.chunk:
            raise GeometryError(
                f"chunk {self.chunk} does not divide history_len {self.history_len}", "chunk")
        if self.valid_len > self.target_len:
            raise GeometryError(
                f"valid_len {self.valid_len} exceeds target_len {self.target_len}", "valid_len")
        if self.valid_len != self.chunk:
            raise GeometryError(
                f"valid_len {self.valid_len} must equal chunk {self.chunk}", "valid_len")
        if not 0 <= self.cached_len <= self.history_len:
            raise GeometryError(
                f"cached_len {self.cached_len} outside [0, {self.history_len}]", "cached_len")
        if self.cached_len % self.chunk:
            raise GeometryError(
                f"chunk {self.chunk} does not divide cached_len {self.cached_len}", "cached_len")

    @property
    def total_len(self) -> int:
        return self.history_len + self.target_len

    @property
    def redundant_len(self) -> int:
        return self.target_len - self.valid_len

    @property
    def num_chunks(self) -> int:
        return self.history_len // self.chunk

    def with_cached(self, cached_len: int) -> "PolicyGeometry":
        return replace(self, cached_len=cached_len)
