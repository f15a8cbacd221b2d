"""Per-round artifact record shared by the training engine and the harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RoundRecord:
    """What one round did and how the global model scored afterwards.

    Metrics are NaN on rounds outside the evaluation cadence; the rate
    snapshot is attached only when requested.  Wall-clock stays in memory
    for diagnostics and is deliberately excluded from serialized output so
    reruns stay byte-identical.
    """

    round: int
    skipped: bool
    n_available: int
    selected: tuple[int, ...]
    per_sample_loss: float = float("nan")
    per_sample_acc: float = float("nan")
    per_user_loss: float = float("nan")
    per_user_acc: float = float("nan")
    rate_snapshot: np.ndarray | None = None
    wall_clock: float = 0.0
