import os
import sys
import unittest

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

import numpy as np

import ditpy as dp
from ditpy.envs import EpisodeDataset, Fork2DEnv, PickPlaceEnv, generate_dataset
from ditpy.evaluation import (
    chunk_seed,
    classify_mode,
    decision_point_velocity,
    evaluate_policy,
    make_chunk_fn,
    network_evaluations,
    regression_baseline_rollout,
    regression_baseline_train,
    rollout,
    run_policy,
)


def tiny_policy(seed=0, variant="adaln"):
    config = dp.PolicyConfig(
        action_dim=2, proprio_dim=2, n_goals=1, n_layers=1, d_model=16, n_heads=2, horizon=4,
        cnn_channels=(4, 8, 8), goal_dim=8, diffusion_steps=20, variant=variant,
    )
    return dp.init_policy(config, seed=seed)


class TestRunPolicy(unittest.TestCase):
    def test_constant_chunks_ensemble_invariant(self):
        def chunk_fn(obs, seed):
            return np.tile([0.3, 1.0], (4, 1))

        on = run_policy(Fork2DEnv(), chunk_fn, horizon=4, seed=0, ensemble_on=True)
        off = run_policy(Fork2DEnv(), chunk_fn, horizon=4, seed=0, ensemble_on=False)
        assert np.allclose(on.episode.actions, off.episode.actions)
        assert np.allclose(on.episode.states, off.episode.states)
        n = len(on.episode)
        assert on.n_chunks == n
        assert off.n_chunks == -(-n // 4)

    def test_open_loop_executes_chunk(self):
        chunk = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])
        result = run_policy(Fork2DEnv(init_noise=0.0), lambda obs, seed: chunk, horizon=4, seed=0, ensemble_on=False)
        np.testing.assert_allclose(result.episode.actions[:8], np.concatenate([chunk, chunk]))

    def test_expert_as_policy(self):
        env = Fork2DEnv()
        result = run_policy(env, lambda obs, seed: env.expert(0)[None], horizon=1, seed=2)
        assert result.success
        assert classify_mode(result.episode.states) == 0

    def test_actions_clipped(self):
        result = run_policy(Fork2DEnv(), lambda obs, seed: np.full((2, 2), 5.0), horizon=2, seed=0)
        assert np.all(result.episode.actions == 1.0)

    def test_chunk_seeds(self):
        seen = []
        run_policy(Fork2DEnv(), lambda obs, seed: seen.append(seed) or np.zeros((2, 2)), horizon=2, seed=7)
        assert seen[0] == chunk_seed(7, 0) and seen[1] == chunk_seed(7, 1)
        assert len(set(seen)) == len(seen)
        assert chunk_seed(7, 1) != chunk_seed(8, 1)


class TestPolicyRollout(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.header, _ = generate_dataset("fork2d", 2, seed=0)
        cls.stats = cls.header.stats
        cls.sched = dp.make_cosine_schedule(20)

    def test_untrained_rollout_completes(self):
        net = tiny_policy()
        result = rollout(net, Fork2DEnv(), dp.GoalSpec(0), self.sched, 2, seed=0, stats=self.stats)
        assert 1 <= len(result.episode) <= Fork2DEnv.max_steps
        assert result.n_chunks == len(result.episode)
        assert np.all(np.abs(result.episode.actions) <= 1.0)

    def test_reproducible(self):
        net = tiny_policy()
        a = rollout(net, Fork2DEnv(), dp.GoalSpec(0), self.sched, 2, seed=4, stats=self.stats, ensemble_on=False)
        b = rollout(net, Fork2DEnv(), dp.GoalSpec(0), self.sched, 2, seed=4, stats=self.stats, ensemble_on=False)
        assert np.array_equal(a.episode.actions, b.episode.actions)

    def test_errors(self):
        net = tiny_policy()
        with self.assertRaises(ValueError):
            rollout(net, Fork2DEnv(), dp.GoalSpec(0), self.sched, 2, seed=0)
        with self.assertRaises(ValueError):
            rollout(net, PickPlaceEnv(), dp.GoalSpec(0), self.sched, 2, seed=0, stats=self.stats)
        with self.assertRaises(ValueError):
            make_chunk_fn(net, self.stats, dp.GoalSpec(0))

    def test_evaluate(self):
        net = tiny_policy()
        eval_config = dp.EvalConfig(n_rollouts=2, ddim_steps=2, seed=10)
        evaluation = evaluate_policy(net, "fork2d", self.stats, eval_config, self.sched)
        assert len(evaluation.results) == 2 and evaluation.success.n == 2
        assert evaluation.coverage is not None
        assert evaluation.nfe == 1
        assert evaluation.latency_ms > 0
        threaded = evaluate_policy(net, "fork2d", self.stats, eval_config, self.sched, workers=2)
        for a, b in zip(evaluation.episodes, threaded.episodes):
            assert np.array_equal(a.actions, b.actions)

    def test_decision_point(self):
        net = tiny_policy()
        point = decision_point_velocity(net, self.stats, seeds=[0, 1, 2], sched=self.sched, ddim_steps=2)
        assert point.n == 3
        assert 0.0 <= point.mean_abs_x <= 1.0 and abs(point.mean_x) <= point.mean_abs_x + 1e-12

    def test_network_evaluations(self):
        assert network_evaluations("ddim", 10, 100) == 9
        assert network_evaluations("ddim", 1, 100) == 1
        assert network_evaluations("ddpm", 10, 100) == 100


class TestBaselineRollout(unittest.TestCase):
    def test_regression_rollout(self):
        header, _ = generate_dataset("fork2d", 2, seed=0)
        config = tiny_policy().config
        net = dp.init_regression_policy(config, seed=0)
        result = regression_baseline_rollout(net, Fork2DEnv(), dp.GoalSpec(0), seed=0, stats=header.stats)
        assert len(result.episode) >= 1
        with self.assertRaises(TypeError):
            regression_baseline_rollout(tiny_policy(), Fork2DEnv(), dp.GoalSpec(0), seed=0, stats=header.stats)

    def test_regression_train(self):
        dataset = EpisodeDataset(*generate_dataset("fork2d", 2, seed=0))
        config = dp.tiny_run_config().with_overrides({"train.iterations": 3, "train.eval_interval": 3})
        result = regression_baseline_train(config, dataset, loss="l1")
        assert isinstance(result.net, dp.RegressionPolicy)
        assert result.config.train.objective == "regression" and result.config.train.regression_loss == "l1"
        assert len(result.losses) == 3


if __name__ == "__main__":
    unittest.main()
