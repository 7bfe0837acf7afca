#!/usr/bin/env python3
"""
Project Settings
Environment-driven defaults for logging, data locations, seeding and evaluation
"""

import os

from dotenv import load_dotenv

load_dotenv()

PRECISIONS = ("float32", "float64")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings:
    """Process-wide settings read from the environment (or a .env file)."""

    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()

    # Where demos, checkpoints, metrics and rollout logs go by default
    DATA_DIR = os.getenv('CDP_DATA_DIR', 'runs')

    # Default master seed when neither the config file nor --seed gives one
    SEED = int(os.getenv('CDP_SEED', '0'))

    # Parameter precision for training and rollouts
    PRECISION = os.getenv('CDP_PRECISION', 'float32')

    # Worker threads for episode evaluation
    EVAL_WORKERS = int(os.getenv('CDP_EVAL_WORKERS', '4'))

    @classmethod
    def validate_config(cls) -> bool:
        """Validate that every setting holds a usable value."""
        problems = []
        if cls.LOG_LEVEL not in LOG_LEVELS:
            problems.append(f"LOG_LEVEL={cls.LOG_LEVEL}")
        if cls.PRECISION not in PRECISIONS:
            problems.append(f"CDP_PRECISION={cls.PRECISION}")
        if cls.EVAL_WORKERS < 1:
            problems.append(f"CDP_EVAL_WORKERS={cls.EVAL_WORKERS}")
        if cls.SEED < 0:
            problems.append(f"CDP_SEED={cls.SEED}")

        if problems:
            print(f"❌ Invalid settings: {problems}")
            return False

        return True


class TrainingSettings:
    """Optimizer and perturbation defaults."""

    SIGMA = 1.0 / 6.0
    BATCH_SIZE = 64
    LEARNING_RATE = 1e-4
    EPOCHS = 300
    VAL_FRACTION = 0.1

    # Adam
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8


class RolloutSettings:
    """Closed-loop evaluation defaults."""

    EVAL_EPISODES = 100
    MAX_STEPS = 300
    BENCH_HISTORY_SWEEP = [8, 16, 32, 64]
    BENCH_AR_STEPS = 50
