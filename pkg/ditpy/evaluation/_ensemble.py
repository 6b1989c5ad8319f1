"""Temporal ensembling of overlapping action-chunk predictions."""
import collections
from typing import Deque, Tuple

import numpy as np

__all__ = ["EnsembleBuffer", "ensemble_weights", "temporal_ensemble"]


def ensemble_weights(n: int, decay: float) -> np.ndarray:
    """Normalized ``exp(-decay * i)`` for ``i = 0..n-1``; index 0 is the newest prediction."""
    if n < 1:
        raise ValueError(f"need at least one prediction but got {n}")
    if decay < 0:
        raise ValueError(f"decay should be >= 0 but is {decay}")
    w = np.exp(-decay * np.arange(n))
    return w / w.sum()


class EnsembleBuffer:
    """Chunks emitted so far, each with the env step it was predicted at.

    Chunks that no longer cover the current step are dropped by :meth:`prune`.
    """

    def __init__(self, horizon: int, decay: float = 0.1):
        if horizon < 1:
            raise ValueError(f"horizon should be >= 1 but is {horizon}")
        if decay < 0:
            raise ValueError(f"decay should be >= 0 but is {decay}")
        self.horizon = horizon
        self.decay = decay
        self._chunks: Deque[Tuple[int, np.ndarray]] = collections.deque(maxlen=horizon)

    def __len__(self):
        return len(self._chunks)

    def add(self, chunk, t: int):
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim != 2 or chunk.shape[0] != self.horizon:
            raise ValueError(f"chunk should have {self.horizon} rows but has shape {chunk.shape}")
        if self._chunks and t < self._chunks[-1][0]:
            raise ValueError(f"chunks should be added in time order, got t={t} after t={self._chunks[-1][0]}")
        self._chunks.append((t, chunk))

    def prune(self, t: int):
        while self._chunks and self._chunks[0][0] + self.horizon <= t:
            self._chunks.popleft()

    def covering(self, t: int):
        """Predictions for step ``t``, newest first."""
        return [chunk[t - t0] for t0, chunk in reversed(self._chunks) if t0 <= t < t0 + self.horizon]


def temporal_ensemble(buffer: EnsembleBuffer, t: int) -> np.ndarray:
    """Convex combination of every buffered prediction for step ``t``."""
    preds = buffer.covering(t)
    if not preds:
        raise ValueError(f"no buffered chunk covers step {t}")
    w = ensemble_weights(len(preds), buffer.decay)
    return np.tensordot(w, np.stack(preds), axes=1)
