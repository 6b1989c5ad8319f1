import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

import ditpy as dp


class TestRunConfig(unittest.TestCase):
    def test_flat_keys(self):
        flat = dp.RunConfig().to_flat()
        assert flat["model.d_model"] == 64
        assert flat["schedule.K"] == 100
        assert flat["model.cnn_channels"] == [16, 32, 32]
        assert flat["eval.ensemble"] is True
        assert all(len(k.split(".")) == 2 for k in flat)

    def test_overrides_coerce(self):
        config = dp.RunConfig().with_overrides(
            {
                "model.d_model": "32",
                "train.lr": "1e-3",
                "eval.ensemble": "false",
                "model.cnn_channels": "8,8,16",
                "env.tag": "pickplace_lang",
            }
        )
        assert config.model.d_model == 32
        assert config.train.lr == 1e-3
        assert config.eval.ensemble is False
        assert config.model.cnn_channels == (8, 8, 16)
        assert config.env.tag == "pickplace_lang"
        # the original is untouched
        assert dp.RunConfig().model.d_model == 64

    def test_unknown_key(self):
        with self.assertRaises(KeyError):
            dp.RunConfig().with_overrides({"model.depth": 3})
        with self.assertRaises(KeyError):
            dp.RunConfig().with_overrides({"lr": 3})

    def test_bad_values(self):
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"eval.ensemble": "maybe"})
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"train.iterations": 2.5})

    def test_flat_reload(self):
        config = dp.tiny_run_config().with_overrides({"model.variant": "cross_attn"})
        again = dp.RunConfig.from_flat(config.to_flat())
        assert again == config

    def test_save_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run" / "config.json"
            config = dp.tiny_run_config()
            config.save(path)
            assert dp.RunConfig.load(path) == config
            bad = Path(tmp) / "list.json"
            bad.write_text("[1, 2]")
            with self.assertRaises(ValueError):
                dp.RunConfig.load(bad)

    def test_validate(self):
        dp.RunConfig().validate()
        dp.tiny_run_config().validate()
        with self.assertRaises(ValueError):
            dp.RunConfig().validate(bound=True)
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"eval.ddim_steps": 101}).validate()
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"schedule.K": 50}).validate()
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"train.objective": "flow"}).validate()
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"env.tag": "maze"}).validate()
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"eval.n_rollouts": 0}).validate()

    def test_schedule_kind(self):
        assert dp.RunConfig().schedule.build().betas.tolist() == dp.make_cosine_schedule(100).betas.tolist()
        config = dp.RunConfig().with_overrides(
            {"schedule.kind": "linear", "schedule.K": 50, "model.diffusion_steps": 50}
        ).validate()
        sched = config.schedule.build()
        assert sched.K == 50
        assert abs(sched.betas[0] - 1e-4) < 1e-12 and abs(sched.betas[-1] - 0.02) < 1e-12
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"schedule.kind": "sigmoid"}).validate()
        with self.assertRaises(ValueError):
            dp.RunConfig().with_overrides({"schedule.kind": "linear", "schedule.beta_end": 1.5}).validate()

    def test_parse_override(self):
        assert dp.parse_override("model.d_model = 32") == ("model.d_model", "32")
        assert dp.parse_override("a=b=c") == ("a", "b=c")
        with self.assertRaises(ValueError):
            dp.parse_override("model.d_model")


class TestOutputRoot(unittest.TestCase):
    def test_resolve(self):
        with mock.patch.dict(os.environ, {dp.OUTPUT_ROOT_ENV: "/data/runs"}):
            assert dp.resolve_output("a/b") == Path("/data/runs/a/b")
            assert dp.resolve_output("/abs/c") == Path("/abs/c")
        with mock.patch.dict(os.environ, {}, clear=True):
            assert dp.resolve_output("a/b") == Path("a/b")


if __name__ == "__main__":
    unittest.main()
