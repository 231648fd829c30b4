"""Scalar schedules for learning rates and momentum coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Schedule"]

KINDS = ("constant", "step_decay", "cosine", "linear_warmup_cosine")


@dataclass
class Schedule:
    """Emits a value per step.

    kind:
      constant             -> base
      step_decay           -> base * decay_factor ** (step // decay_interval)
      cosine               -> base -> final over total_steps
      linear_warmup_cosine -> 0 -> base over warmup_steps, then cosine to final
    """

    kind: str = "constant"
    base: float = 1.0
    final: float = 0.0
    warmup_steps: int = 0
    total_steps: int = 1
    decay_factor: float = 0.95
    decay_interval: int = 100

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind in ("cosine", "linear_warmup_cosine") and self.total_steps < 1:
            raise ValueError("total_steps must be positive for cosine schedules")
        if self.kind == "step_decay" and self.decay_interval < 1:
            raise ValueError("decay_interval must be positive")

    def _cosine(self, step: int, start_step: int) -> float:
        span = max(self.total_steps - start_step, 1)
        t = min(max(step - start_step, 0), span) / span
        return self.final + (self.base - self.final) * 0.5 * (1.0 + np.cos(np.pi * t))

    def value(self, step: int) -> float:
        if self.kind == "constant":
            return self.base
        if self.kind == "step_decay":
            return self.base * self.decay_factor ** (step // self.decay_interval)
        if self.kind == "cosine":
            return float(self._cosine(step, 0))
        # linear warmup, then cosine from base to final
        if step < self.warmup_steps:
            return self.base * (step + 1) / self.warmup_steps
        return float(self._cosine(step, self.warmup_steps))
