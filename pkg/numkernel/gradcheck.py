"""
Central finite-difference gradient checks
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from numkernel.tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    worst: Dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.worst.values()) if self.worst else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn: Callable[[], Tensor],
                    tensors: Dict[str, Tensor],
                    h: float = 1e-5,
                    max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None,
                    tolerance: float = 1e-4) -> GradCheckReport:
    """
    Compare tape gradients with central differences.

    Args:
        loss_fn: Deterministic closure returning a scalar tensor
        tensors: Named leaves to check (must be float64 for tight tolerances)
        h: Finite-difference step
        max_entries: Check at most this many random entries per tensor (all if None)
        rng: Generator used to pick entries
        tolerance: Relative error threshold

    Returns:
        GradCheckReport with the worst relative error per tensor
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors.values():
        # entries are perturbed in place through a flat view
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None

    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)

    report = GradCheckReport(tolerance=tolerance)
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=max_entries, replace=False)

        worst = 0.0
        for i in picks:
            original = flat[i]
            flat[i] = original + h
            plus = loss_fn().item()
            flat[i] = original - h
            minus = loss_fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            worst = max(worst, relative_error(float(analytic.reshape(-1)[i]), numeric))
        report.worst[name] = worst

    if not report.passed:
        failing = {k: v for k, v in report.worst.items() if v >= tolerance}
        logger.warning(f"⚠️ Gradient check failed for {sorted(failing)}")
    return report
