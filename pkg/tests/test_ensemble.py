import math
import os
import sys
import unittest

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ditpy.evaluation import EnsembleBuffer, ensemble_weights, temporal_ensemble


class TestWeights(unittest.TestCase):
    def test_newest_heaviest(self):
        w = ensemble_weights(4, 0.5)
        np.testing.assert_allclose(w.sum(), 1.0)
        assert np.all(np.diff(w) < 0)
        np.testing.assert_allclose(w[1] / w[0], math.exp(-0.5))

    def test_no_decay_is_mean(self):
        np.testing.assert_allclose(ensemble_weights(5, 0.0), np.full(5, 0.2))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            ensemble_weights(0, 0.1)
        with self.assertRaises(ValueError):
            ensemble_weights(2, -1.0)


class TestTemporalEnsemble(unittest.TestCase):
    def test_two_predictions(self):
        buffer = EnsembleBuffer(horizon=3, decay=math.log(2))
        old = np.array([[0.0, 0.0], [3.0, 3.0], [9.0, 9.0]])
        new = np.array([[6.0, -3.0], [1.0, 1.0], [1.0, 1.0]])
        buffer.add(old, t=0)
        buffer.add(new, t=1)
        # p0 = newest = [6, -3], p1 = old[1] = [3, 3]
        np.testing.assert_allclose(temporal_ensemble(buffer, 1), [(2 * 6 + 3) / 3, (2 * -3 + 3) / 3])

    def test_single_prediction_passthrough(self):
        buffer = EnsembleBuffer(horizon=4)
        chunk = np.arange(8.0).reshape(4, 2)
        buffer.add(chunk, t=10)
        for i in range(4):
            np.testing.assert_allclose(temporal_ensemble(buffer, 10 + i), chunk[i])
        with self.assertRaises(ValueError):
            temporal_ensemble(buffer, 14)

    def test_prune_and_capacity(self):
        buffer = EnsembleBuffer(horizon=3)
        for t in range(6):
            buffer.add(np.full((3, 1), float(t)), t)
            buffer.prune(t)
            assert len(buffer) == min(t + 1, 3)
        assert [p[0] for p in buffer.covering(5)] == [5.0, 4.0, 3.0]
        buffer.prune(8)
        assert len(buffer) == 0

    def test_constant_predictions(self):
        buffer = EnsembleBuffer(horizon=5, decay=0.3)
        a = np.array([0.25, -0.5])
        for t in range(5):
            buffer.add(np.tile(a, (5, 1)), t)
        np.testing.assert_allclose(temporal_ensemble(buffer, 4), a)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.floats(min_value=0.0, max_value=2.0), st.integers(0, 1000))
    def test_convex(self, horizon, decay, seed):
        rng = np.random.RandomState(seed)
        buffer = EnsembleBuffer(horizon=horizon, decay=decay)
        for t in range(horizon):
            buffer.add(rng.uniform(-1, 1, (horizon, 2)), t)
        t = horizon - 1
        preds = np.stack(buffer.covering(t))
        out = temporal_ensemble(buffer, t)
        assert np.all(out >= preds.min(axis=0) - 1e-12) and np.all(out <= preds.max(axis=0) + 1e-12)

    def test_errors(self):
        with self.assertRaises(ValueError):
            EnsembleBuffer(horizon=0)
        buffer = EnsembleBuffer(horizon=2)
        with self.assertRaises(ValueError):
            buffer.add(np.zeros((3, 2)), 0)
        buffer.add(np.zeros((2, 2)), 5)
        with self.assertRaises(ValueError):
            buffer.add(np.zeros((2, 2)), 4)


if __name__ == "__main__":
    unittest.main()
