"""Success-rate statistics and fork2d mode coverage."""
import math
from typing import NamedTuple, Sequence

import numpy as np
import scipy.stats

__all__ = ["PASSAGE_BAND", "SuccessStats", "ModeCoverage", "success_stats", "classify_mode", "mode_coverage"]

PASSAGE_BAND = (0.4, 0.6)


class SuccessStats(NamedTuple):
    rate: float
    stderr: float
    ci_low: float
    ci_high: float
    n: int


class ModeCoverage(NamedTuple):
    left: float
    right: float
    n_success: int
    empty: bool


def success_stats(successes: Sequence[bool], confidence: float = 0.95) -> SuccessStats:
    """Rate with its binomial standard error and a Wilson score interval."""
    n = len(successes)
    if n == 0:
        raise ValueError("success statistics need at least one rollout")
    k = int(np.sum(successes))
    p = k / n
    ci = scipy.stats.binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return SuccessStats(rate=p, stderr=math.sqrt(p * (1 - p) / n), ci_low=float(ci.low), ci_high=float(ci.high), n=n)


def classify_mode(states) -> int:
    """0 (left) or 1 (right) from the mean x over the passage band; -1 if the band is never visited."""
    states = np.asarray(states)
    in_band = (states[:, 1] >= PASSAGE_BAND[0]) & (states[:, 1] <= PASSAGE_BAND[1])
    if not np.any(in_band):
        return -1
    return 0 if states[in_band, 0].mean() < 0 else 1


def mode_coverage(episodes) -> ModeCoverage:
    """Fractions of successful episodes passing left and right of the obstacle.

    With no successful episode both fractions are 0 and ``empty`` is set.
    """
    modes = [classify_mode(e.states) for e in episodes if e.success]
    if not modes:
        return ModeCoverage(0.0, 0.0, 0, True)
    n = len(modes)
    return ModeCoverage(modes.count(0) / n, modes.count(1) / n, n, False)
