"""
Toy 2D environments with scripted experts
"""

from envs.base import Env
from envs.pusht_lite import PushTLite
from envs.reach2d import Reach2D
from policy.errors import ConfigError

TASKS = {
    Reach2D.name: Reach2D,
    PushTLite.name: PushTLite,
}


def make_env(task: str) -> Env:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}, expected one of {sorted(TASKS)}", "task")
    return TASKS[task]()
