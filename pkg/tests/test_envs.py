import os
import sys
import unittest

HERE = os.path.dirname(os.path.abspath(__file__))
PKG = os.path.join(HERE, "..")

sys.path.insert(0, PKG)

import numpy as np

import ditpy as dp
from ditpy.envs import Disc, Fork2DEnv, PickPlaceEnv, View, goal_to_targets, make_env, rasterize


class TestRender(unittest.TestCase):
    def test_disc_and_ring(self):
        view = View((0.0, 0.0), 1.0)
        image = rasterize([Disc((0.0, 0.0), 0.3, (1.0, 0.5, 0.0))], view, size=8)
        assert image.shape == (3, 8, 8)
        assert image[0, 4, 4] == 1.0 and image[1, 4, 4] == 0.5
        assert image[0, 0, 0] == 0.0

        ring = rasterize([Disc((0.0, 0.0), 0.4, (1.0, 1.0, 1.0), inner_radius=0.3)], view, size=16)
        assert ring[0, 8, 8] == 0.0
        assert ring.max() == 1.0

    def test_later_discs_on_top(self):
        view = View((0.0, 0.0), 1.0)
        image = rasterize(
            [Disc((0.0, 0.0), 0.3, (1.0, 0.0, 0.0)), Disc((0.0, 0.0), 0.1, (0.0, 0.0, 1.0))], view, size=8
        )
        assert image[2, 4, 4] == 1.0 and image[0, 4, 4] == 0.0

    def test_top_row_is_high_y(self):
        view = View((0.0, 0.0), 1.0)
        image = rasterize([Disc((0.0, 0.45), 0.1, (1.0, 1.0, 1.0))], view, size=10)
        assert image[0, 0].max() == 1.0
        assert image[0, -1].max() == 0.0


class TestFork2D(unittest.TestCase):
    def test_expert_modes(self):
        for mode, sign in ((0, -1), (1, 1)):
            for seed in range(3):
                e = dp.envs.run_expert_episode("fork2d", seed, mode=mode)
                assert e.success
                assert len(e) <= Fork2DEnv.max_steps
                band = (e.states[:, 1] > 0.4) & (e.states[:, 1] < 0.6)
                assert np.all(sign * e.states[band, 0] > 0.2)

    def test_collision(self):
        env = Fork2DEnv()
        env.reset(seed=0)
        done = False
        for _ in range(Fork2DEnv.max_steps):
            _, done = env.step([0.0, 1.0])
            if done:
                break
        assert done and env.collided and not env.success
        assert env.step_count < 10

    def test_observation(self):
        env = Fork2DEnv(image_size=16)
        obs = env.reset(seed=1)
        assert obs.images.shape == (2, 3, 16, 16)
        assert np.all((obs.images >= 0) & (obs.images <= 1))
        assert obs.proprio.shape == (2,)
        assert abs(obs.proprio[0]) <= 0.02 and obs.proprio[1] == 0.0

    def test_action_clamped(self):
        env = Fork2DEnv(init_noise=0.0)
        env.reset()
        env.step([5.0, 0.0])
        np.testing.assert_allclose(env.state, [0.05, 0.0])

    def test_errors(self):
        env = Fork2DEnv()
        with self.assertRaises(ValueError):
            env.reset(goal_id=1)
        env.reset(seed=0)
        with self.assertRaises(ValueError):
            env.step([0.0, 0.0, 1.0])
        with self.assertRaises(ValueError):
            env.expert("up")
        assert np.array_equal(env.expert("left"), env.expert(0))


class TestPickPlace(unittest.TestCase):
    def test_goal_targets(self):
        assert goal_to_targets(0) == (0, 0)
        assert goal_to_targets(1) == (0, 1)
        assert goal_to_targets(3) == (1, 1)
        with self.assertRaises(ValueError):
            goal_to_targets(4)

    def test_expert_all_goals(self):
        for goal in range(PickPlaceEnv.n_goals):
            for seed in range(3):
                e = dp.envs.run_expert_episode("pickplace_lang", seed, goal_id=goal)
                assert e.success
                assert e.actions.shape[1] == 3

    def test_reset_layout(self):
        env = PickPlaceEnv()
        env.reset(seed=4, goal_id=2)
        points = np.concatenate([env.gripper[None], env.objects, env.receptacles])
        for i in range(len(points)):
            for j in range(i + 1, len(points)):
                assert np.hypot(*(points[i] - points[j])) >= 0.25
        assert not env.success

    def test_grasp_and_release(self):
        env = PickPlaceEnv()
        env.reset(seed=0, goal_id=0)
        env.gripper = env.objects[0].copy()
        env.step([0.0, 0.0, 1.0])
        assert env.held == 0
        env.step([1.0, 0.0, 1.0])
        np.testing.assert_allclose(env.objects[0], env.gripper)
        env.step([0.0, 0.0, -1.0])
        assert env.held == -1

    def test_proprio(self):
        env = PickPlaceEnv()
        obs = env.reset(seed=0, goal_id=1)
        assert obs.proprio.shape == (3,)
        assert obs.proprio[2] == -1.0
        with self.assertRaises(ValueError):
            env.step([0.0, 0.0])

    def test_make_env(self):
        assert isinstance(make_env("pickplace_lang"), PickPlaceEnv)
        with self.assertRaises(ValueError):
            make_env("kitchen")


if __name__ == "__main__":
    unittest.main()
