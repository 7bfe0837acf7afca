"""
Run configuration
One flat record per run, loaded from canonical JSON and overridden by CLI flags.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List, Optional, Union

from config.settings import PRECISIONS, Settings
from envs import TASKS
from policy.errors import ConfigError
from policy.geometry import PolicyGeometry
from policy.model import ModelConfig
from policy.schedule import make_schedule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    task: str = "reach2d"

    # geometry
    history_len: int = 16
    target_len: int = 12
    valid_len: int = 8
    chunk: int = 8

    # model
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    d_ff: int = 128
    temporal_period: int = 0
    n_obs_tokens: int = 1

    # schedule
    num_steps: int = 50
    schedule_kind: str = "cosine"
    beta_min: float = 1e-4
    beta_max: float = 0.999
    inference_stride: int = 1

    # training
    sigma: float = 1.0 / 6.0
    batch_size: int = 64
    epochs: int = 300
    learning_rate: float = 1e-4
    val_fraction: float = 0.1
    seed: int = Settings.SEED
    precision: str = Settings.PRECISION

    # evaluation
    eval_episodes: int = 100
    max_steps: int = 300
    noise_scale: float = 0.0
    dropout_prob: float = 0.0
    use_cache: bool = True
    stochastic_sampling: bool = False

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = sorted(set(data) - set(cls.field_names()))
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", unknown[0])
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except ValueError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Replace every field whose override is not None."""
        chosen = {k: v for k, v in overrides.items() if v is not None}
        unknown = sorted(set(chosen) - set(self.field_names()))
        if unknown:
            raise ConfigError(f"unknown keys {unknown}", unknown[0])
        return replace(self, **chosen)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def geometry(self) -> PolicyGeometry:
        return PolicyGeometry(self.history_len, self.target_len, self.valid_len, self.chunk)

    def schedule_dict(self) -> dict:
        return {"num_steps": self.num_steps, "kind": self.schedule_kind,
                "beta_min": self.beta_min, "beta_max": self.beta_max}

    def model_config(self, action_dim: int, obs_dim: int) -> ModelConfig:
        return ModelConfig(
            action_dim=action_dim,
            obs_dim=obs_dim,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_blocks=self.n_blocks,
            d_ff=self.d_ff,
            geometry=self.geometry(),
            schedule=self.schedule_dict(),
            temporal_period=self.temporal_period,
            n_obs_tokens=self.n_obs_tokens,
        )

    def validation_errors(self) -> List[str]:
        """Field-level messages for every invalid value (empty when valid)."""
        errors = []

        def check(ok: bool, field: str, message: str):
            if not ok:
                errors.append(f"{field}: {message}")

        check(self.task in TASKS, "task", f"unknown task {self.task!r}, expected one of {list(TASKS)}")
        for build in (self.geometry, lambda: self.model_config(1, 1),
                      lambda: make_schedule(self.num_steps, self.schedule_kind, self.beta_min, self.beta_max)):
            try:
                build()
            except ConfigError as e:
                errors.append(str(e))
                break
        check(self.inference_stride >= 1, "inference_stride", "must be >= 1")
        check(0.0 < self.sigma < 1.0, "sigma", f"must lie in (0, 1), got {self.sigma}")
        check(self.batch_size >= 1, "batch_size", "must be >= 1")
        check(self.epochs >= 1, "epochs", "must be >= 1")
        check(self.learning_rate > 0, "learning_rate", "must be > 0")
        check(0.0 <= self.val_fraction < 1.0, "val_fraction", "must lie in [0, 1)")
        check(self.seed >= 0, "seed", "must be >= 0")
        check(self.precision in PRECISIONS, "precision", f"must be one of {PRECISIONS}")
        check(self.eval_episodes >= 1, "eval_episodes", "must be >= 1")
        check(self.max_steps >= 1, "max_steps", "must be >= 1")
        check(self.noise_scale >= 0, "noise_scale", "must be >= 0")
        check(0.0 <= self.dropout_prob < 1.0, "dropout_prob", "must lie in [0, 1)")
        return errors

    def validate(self) -> "RunConfig":
        errors = self.validation_errors()
        if errors:
            raise ConfigError("; ".join(errors))
        return self


# sim: divisible stand-in for the 20 history / 8 valid / 4 redundant setting
# heavy: longer chunks and stronger history perturbation
PRESETS = {
    "sim": RunConfig(history_len=16, chunk=8, target_len=12, valid_len=8, sigma=1.0 / 6.0),
    "heavy": RunConfig(history_len=32, chunk=16, target_len=24, valid_len=16, sigma=0.5),
}


def resolve_config(path: Optional[Union[str, Path]] = None, preset: Optional[str] = None,
                   **overrides) -> RunConfig:
    """Preset (or defaults), then config file, then CLI overrides; validated."""
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}", "preset")
    cfg = PRESETS[preset] if preset else RunConfig()
    if path is not None:
        loaded = RunConfig.load(path)
        file_keys = json.loads(Path(path).read_text()).keys()
        cfg = cfg.with_overrides(**{k: getattr(loaded, k) for k in file_keys})
    cfg = cfg.with_overrides(**overrides)
    cfg.validate()
    logger.info(f"⚙️ Resolved config: {cfg.to_canonical_json()}")
    return cfg
