import os
import sys
import tempfile
import unittest

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

import numpy as np
import torch

import ditpy as dp
from ditpy.envs import NormalizationStats


def tiny_config(**kwargs):
    values = dict(action_dim=2, proprio_dim=2, n_goals=1, n_layers=1, d_model=16, n_heads=2, horizon=4,
                  cnn_channels=(4, 8, 8), goal_dim=8, diffusion_steps=20, variant="adaln")
    values.update(kwargs)
    return dp.PolicyConfig(**values)


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.stats = NormalizationStats([-0.5, 0.0], [0.5, 1.0], [-1.0, -1.0], [1.0, 1.0])

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_restores_predictions(self):
        net = dp.init_policy(tiny_config(), seed=3)
        run_config = dp.tiny_run_config()
        dp.save_checkpoint(self.path("a.pt"), net, self.stats, run_config=run_config)
        ckpt = dp.load_checkpoint(self.path("a.pt"))

        assert ckpt.kind == "diffusion" and ckpt.version == dp.CHECKPOINT_VERSION
        assert ckpt.net.config == net.config
        assert ckpt.run_config == run_config
        assert all(np.array_equal(a, b) for a, b in zip(ckpt.stats.arrays(), self.stats.arrays()))
        for (na, pa), (nb, pb) in zip(net.named_parameters(), ckpt.net.named_parameters()):
            assert na == nb and torch.equal(pa, pb)

        rng = np.random.RandomState(0)
        obs = dp.Observation(images=rng.rand(2, 3, 32, 32), proprio=rng.uniform(-1, 1, 2))
        x = rng.standard_normal((4, 2))
        assert np.array_equal(
            dp.predict_epsilon(net, x, 5, obs, dp.GoalSpec(0)),
            dp.predict_epsilon(ckpt.net, x, 5, obs, dp.GoalSpec(0)),
        )

    def test_same_inputs_same_bytes(self):
        run_config = dp.tiny_run_config()
        paths = []
        for sub in ("a", "b"):
            net = dp.init_policy(tiny_config(), seed=3)
            paths.append(dp.save_checkpoint(self.path(os.path.join(sub, "p.pt")), net, self.stats, run_config))
        with open(paths[0], "rb") as fa, open(paths[1], "rb") as fb:
            assert fa.read() == fb.read()

    def test_regression_kind(self):
        net = dp.init_regression_policy(tiny_config(), seed=0)
        dp.save_checkpoint(self.path("r.pt"), net, self.stats)
        ckpt = dp.load_checkpoint(self.path("r.pt"))
        assert ckpt.kind == "regression" and isinstance(ckpt.net, dp.RegressionPolicy)
        assert ckpt.run_config is None
        assert not ckpt.net.training

    def test_not_a_checkpoint(self):
        with open(self.path("junk.pt"), "wb") as f:
            f.write(b"definitely not a checkpoint")
        with self.assertRaises(dp.CheckpointFormatError):
            dp.load_checkpoint(self.path("junk.pt"))
        torch.save({"format_version": 1}, self.path("partial.pt"))
        with self.assertRaises(dp.CheckpointFormatError):
            dp.load_checkpoint(self.path("partial.pt"))
        with self.assertRaises(FileNotFoundError):
            dp.load_checkpoint(self.path("missing.pt"))

    def test_version_and_kind(self):
        net = dp.init_policy(tiny_config(), seed=0)
        dp.save_checkpoint(self.path("v.pt"), net, self.stats)
        payload = torch.load(self.path("v.pt"), weights_only=True)
        payload["format_version"] = 99
        torch.save(payload, self.path("v99.pt"))
        with self.assertRaises(dp.CheckpointFormatError):
            dp.load_checkpoint(self.path("v99.pt"))
        payload["format_version"] = dp.CHECKPOINT_VERSION
        payload["kind"] = "flow"
        torch.save(payload, self.path("flow.pt"))
        with self.assertRaises(dp.CheckpointFormatError):
            dp.load_checkpoint(self.path("flow.pt"))

    def test_summary(self):
        net = dp.init_policy(tiny_config(), seed=0)
        dp.save_checkpoint(self.path("s.pt"), net, self.stats)
        text = dp.summarize_checkpoint(self.path("s.pt"))
        assert f"parameters: {dp.count_parameters(net)}" in text
        assert "model.variant: adaln" in text


if __name__ == "__main__":
    unittest.main()
