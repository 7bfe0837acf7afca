"""
Per-dimension min-max normalization to [-1, 1]
"""

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from policy.errors import ConfigError

# Dimensions whose training range is narrower than this are mapped to 0.
MIN_RANGE = 1e-8


@dataclass(frozen=True)
class MinMaxNormalizer:
    low: np.ndarray
    high: np.ndarray

    @classmethod
    def fit(cls, arrays: Iterable[np.ndarray]) -> "MinMaxNormalizer":
        stacked = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, np.shape(a)[-1])
                                  for a in arrays], axis=0)
        if stacked.size == 0:
            raise ConfigError("cannot fit a normalizer on no data", "dataset")
        return cls(stacked.min(axis=0), stacked.max(axis=0))

    @classmethod
    def identity(cls, dim: int) -> "MinMaxNormalizer":
        return cls(-np.ones(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return int(self.low.shape[0])

    def _span(self) -> np.ndarray:
        span = self.high - self.low
        return np.where(span < MIN_RANGE, 2.0, span)

    def _center(self) -> np.ndarray:
        return np.where(self.high - self.low < MIN_RANGE, self.low, (self.high + self.low) / 2.0)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return (2.0 * (x - self._center()) / self._span()).astype(x.dtype if x.dtype.kind == "f" else np.float64)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return (x * self._span() / 2.0 + self._center()).astype(x.dtype if x.dtype.kind == "f" else np.float64)

    def to_dict(self) -> dict:
        return {"low": [float(v) for v in self.low], "high": [float(v) for v in self.high]}

    @classmethod
    def from_dict(cls, data: dict) -> "MinMaxNormalizer":
        return cls(np.asarray(data["low"], dtype=np.float64), np.asarray(data["high"], dtype=np.float64))
