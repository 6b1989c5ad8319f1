import math
import os
import sys
import unittest

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

import numpy as np

from ditpy.envs import Episode, run_expert_episode
from ditpy.evaluation import classify_mode, mode_coverage, success_stats


def fake_episode(xs, ys, success=True):
    states = np.stack([xs, ys], axis=1)
    return Episode(goal_id=0, proprio=states, actions=np.zeros_like(states), states=states, success=success)


class TestSuccessStats(unittest.TestCase):
    def test_rate_and_stderr(self):
        s = success_stats([True] * 30 + [False] * 20)
        assert s.n == 50 and s.rate == 0.6
        np.testing.assert_allclose(s.stderr, math.sqrt(0.6 * 0.4 / 50))
        assert s.ci_low < 0.6 < s.ci_high

    def test_wilson_interval(self):
        s = success_stats([True] * 7 + [False] * 3)
        # Wilson score interval at z = 1.96
        z, n, p = 1.959963984540054, 10, 0.7
        center = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
        np.testing.assert_allclose([s.ci_low, s.ci_high], [center - half, center + half], rtol=1e-6)

    def test_extremes(self):
        s = success_stats([True] * 5)
        assert s.rate == 1.0 and s.stderr == 0.0
        assert s.ci_high == 1.0 and s.ci_low < 1.0
        s = success_stats([False] * 5)
        assert s.ci_low == 0.0 and s.ci_high > 0.0

    def test_empty(self):
        with self.assertRaises(ValueError):
            success_stats([])


class TestModes(unittest.TestCase):
    def test_classify(self):
        ys = np.linspace(0, 1, 11)
        assert classify_mode(np.stack([-0.3 * np.ones(11), ys], axis=1)) == 0
        assert classify_mode(np.stack([0.3 * np.ones(11), ys], axis=1)) == 1
        assert classify_mode(np.stack([np.zeros(3), [0.0, 0.1, 0.2]], axis=1)) == -1

    def test_expert_modes(self):
        assert classify_mode(run_expert_episode("fork2d", 0, mode=0).states) == 0
        assert classify_mode(run_expert_episode("fork2d", 0, mode=1).states) == 1

    def test_coverage(self):
        ys = np.linspace(0, 1, 11)
        episodes = [
            fake_episode(-0.3 * np.ones(11), ys),
            fake_episode(0.3 * np.ones(11), ys),
            fake_episode(0.3 * np.ones(11), ys),
            fake_episode(-0.3 * np.ones(11), ys, success=False),
        ]
        c = mode_coverage(episodes)
        assert c.n_success == 3 and not c.empty
        np.testing.assert_allclose([c.left, c.right], [1 / 3, 2 / 3])

    def test_no_success(self):
        c = mode_coverage([fake_episode(np.zeros(2), np.zeros(2), success=False)])
        assert c.empty and c.n_success == 0 and c.left == 0.0 and c.right == 0.0


if __name__ == "__main__":
    unittest.main()
