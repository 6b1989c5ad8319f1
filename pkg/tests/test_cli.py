import contextlib
import io
import json
import os
import sys
import tempfile
import unittest
from unittest import mock

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

from ditpy._cli import _load_config, build_parser, main


def run(argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(argv)
    return code, out.getvalue()


@mock.patch.dict(os.environ, {"DITPY_OUTPUT_ROOT": ""})
class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_gradcheck(self):
        code, text = run(["gradcheck", "--variant", "adaln_zero", "--n-params", "50"])
        assert code == 0
        assert "adaln_zero: max relative error" in text

    def test_gradcheck_seed_is_not_the_data_seed(self):
        args = build_parser().parse_args(["gradcheck", "--seed", "5", "--set", "env.seed=7"])
        assert args.check_seed == 5
        assert _load_config(args).env.seed == 7
        args = build_parser().parse_args(["gradcheck", "--seed", "5"])
        assert _load_config(args).env.seed == 0

    def test_pipeline(self):
        data = self.path("fork.eps")
        ckpt = self.path("policy.pt")
        report = self.path("report")

        code, text = run(["gen-data", "--quick", "--env", "fork2d", "-n", "4", "--seed", "1", "--out", data])
        assert code == 0 and "wrote 4 fork2d episodes" in text
        assert os.path.exists(data + ".config.json")

        code, text = run(["train", "--quick", "--data", data, "--out", ckpt, "--set", "train.iterations=4"])
        assert code == 0 and "checkpoint:" in text
        assert os.path.exists(ckpt) and os.path.exists(ckpt + ".log.jsonl")

        code, text = run(["eval", "--checkpoint", ckpt, "--n-rollouts", "1", "--ddim-steps", "2", "--out", report])
        assert code == 0 and text.startswith("success")
        assert os.path.exists(os.path.join(report, "report.jsonl"))

        code, _ = run(["eval", "--checkpoint", ckpt, "--n-rollouts", "0"])
        assert code == 2

        for target, expected in ((data, "fork2d"), (ckpt, "parameters:"), (report, "1 rows"),
                                 (ckpt + ".config.json", "model.variant = ")):
            code, text = run(["inspect", target])
            assert code == 0 and expected in text

    def test_ablate(self):
        suite = self.path("suite.json")
        with open(suite, "w") as f:
            json.dump({"spaces": {"variant": {"model.variant": ["adaln_zero", "in_context"]}}}, f)
        out = self.path("ablation")
        code, text = run([
            "ablate", "--quick", "--suite", suite, "--out", out,
            "--set", "train.iterations=4", "--set", "eval.n_rollouts=1", "--set", "eval.ddim_steps=2",
        ])
        assert code == 0 and "in_context" in text
        assert sorted(os.listdir(out)) == ["config.json", "curves.csv", "report.jsonl", "report.txt"]
        code, text = run(["inspect", out])
        assert code == 0 and "3 rows" in text

    def test_invalid_input(self):
        code, _ = run(["gen-data", "--quick", "--set", "model.depth=2", "--out", self.path("x.eps")])
        assert code == 2
        code, _ = run(["eval", "--checkpoint", self.path("missing.pt")])
        assert code == 2
        code, _ = run(["train", "--data", self.path("missing.eps"), "--out", self.path("p.pt")])
        assert code == 2
        code, _ = run(["inspect", self.path("missing.pt")])
        assert code == 2
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["train", "--data", "x"])


if __name__ == "__main__":
    unittest.main()
