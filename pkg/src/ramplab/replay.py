"""FIFO experience replay with seeded uniform sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ramplab.representation import StateSnapshot


@dataclass
class Transition:
    """One stored step: snapshots, the per-CAV action indices actually taken
    (filler for CAVs already inactive), the shared reward, and activity flags
    at both ends."""

    s: StateSnapshot
    actions: np.ndarray            # (m,) int action indices
    reward: float
    s_next: StateSnapshot
    done: bool
    active_at_s: np.ndarray        # (m,) bool
    active_at_s_next: np.ndarray   # (m,) bool


class ReplayBuffer:
    """Ring buffer; at capacity the oldest transition is overwritten first."""

    def __init__(self, capacity: int, seed: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._storage: list[Transition] = []
        self._cursor = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._storage)

    def add(self, transition: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._cursor] = transition
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int) -> list[Transition]:
        """Uniform sample without replacement."""
        if batch_size > len(self._storage):
            raise ValueError(
                f"cannot sample {batch_size} from buffer of {len(self._storage)}"
            )
        idx = self._rng.choice(len(self._storage), size=batch_size, replace=False)
        return [self._storage[i] for i in idx]
