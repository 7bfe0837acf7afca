"""
Demonstration episodes and training windows
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from policy.errors import ConfigError, RangeError, ShapeError
from policy.geometry import PolicyGeometry
from policy.normalizer import MinMaxNormalizer

logger = logging.getLogger(__name__)


@dataclass
class Episode:
    observations: np.ndarray  # [n, obs_dim]
    actions: np.ndarray       # [n, action_dim]
    success: bool

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise ShapeError(f"episode arrays must be 2-D, got {self.observations.shape} / {self.actions.shape}")
        if len(self.observations) != len(self.actions):
            raise ShapeError(f"{len(self.observations)} observations vs {len(self.actions)} actions")
        if not (np.all(np.isfinite(self.observations)) and np.all(np.isfinite(self.actions))):
            raise ConfigError("episode holds non-finite values", "episode")

    def __len__(self) -> int:
        return len(self.actions)

    def normalized(self, act_norm: MinMaxNormalizer, obs_norm: MinMaxNormalizer) -> "Episode":
        return Episode(obs_norm.normalize(self.observations), act_norm.normalize(self.actions), self.success)

    def to_json(self) -> str:
        return json.dumps({"obs": self.observations.tolist(), "act": self.actions.tolist(),
                           "success": bool(self.success)}, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Episode":
        data = json.loads(line)
        return cls(np.asarray(data["obs"]), np.asarray(data["act"]), bool(data["success"]))


@dataclass
class TrainingSample:
    history: np.ndarray   # [L, action_dim]
    targets: np.ndarray   # [M, action_dim]
    obs: np.ndarray       # [obs_dim]
    offset: int


def write_episodes(path: Union[str, Path], episodes: Iterable[Episode]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for episode in episodes:
            f.write(episode.to_json() + "\n")
    return path


def read_episodes(path: Union[str, Path]) -> List[Episode]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"demo file not found: {path}")
    episodes = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                episodes.append(Episode.from_json(line))
            except (KeyError, ValueError) as e:
                raise ConfigError(f"{path}:{lineno}: bad episode record ({e})", "dataset")
    logger.info(f"📂 Read {len(episodes)} episodes from {path}")
    return episodes


def window_starts(episode: Episode, geom: PolicyGeometry) -> range:
    """Valid starts: history may reach back before step 0 (padded), targets may not pass the end."""
    return range(-geom.history_len, len(episode) - geom.history_len - geom.target_len + 1)


def sample_window(episode: Episode, start: int, geom: PolicyGeometry, rng: np.random.Generator,
                  period: Optional[int] = None) -> TrainingSample:
    """
    Cut one L+M window starting at `start`.

    History indices before 0 repeat the first action. The observation is the
    one recorded at the history/target boundary and the cyclic offset is drawn
    uniformly from [0, period).
    """
    L, M = geom.history_len, geom.target_len
    if start < -L or start + L + M > len(episode):
        raise RangeError(f"window [{start}, {start + L + M}) does not fit an episode of {len(episode)} steps")
    period = period if period is not None else 4 * geom.total_len
    idx = np.clip(np.arange(start, start + L + M), 0, None)
    actions = episode.actions[idx]
    return TrainingSample(
        history=actions[:L],
        targets=actions[L:],
        obs=episode.observations[start + L],
        offset=int(rng.integers(period)),
    )


def window_index(episodes: Sequence[Episode], geom: PolicyGeometry) -> List[Tuple[int, int]]:
    """(episode, start) for every window of every episode."""
    return [(i, s) for i, ep in enumerate(episodes) for s in window_starts(ep, geom)]


def split_episodes(episodes: Sequence[Episode], val_fraction: float,
                   rng: np.random.Generator) -> Tuple[List[Episode], List[Episode]]:
    """Hold out a fraction of whole episodes; at least one stays for training."""
    order = rng.permutation(len(episodes))
    n_val = min(int(round(val_fraction * len(episodes))), len(episodes) - 1)
    val = [episodes[i] for i in sorted(order[:n_val])]
    train = [episodes[i] for i in sorted(order[n_val:])]
    return train, val


def stack_samples(samples: Sequence[TrainingSample], dtype=np.float64):
    """Batch arrays (history, targets, obs, offsets) with a leading sample axis."""
    return (np.stack([s.history for s in samples]).astype(dtype),
            np.stack([s.targets for s in samples]).astype(dtype),
            np.stack([s.obs for s in samples]).astype(dtype),
            np.array([s.offset for s in samples], dtype=np.int64))
