"""Point agent that must pass a circular obstacle on either side to reach its goal."""
import numpy as np

from .._policy import Observation
from ._render import Disc, View, rasterize

__all__ = ["FORK_MODES", "Fork2DEnv", "fork_expert"]

FORK_MODES = ("left", "right")

OBSTACLE_CENTER = np.array([0.0, 0.5])
OBSTACLE_RADIUS = 0.2
GOAL = np.array([0.0, 1.0])
WAYPOINT_X = 0.4
DT = 0.05


def _mode_index(mode):
    if isinstance(mode, str):
        if mode not in FORK_MODES:
            raise ValueError(f"mode should be one of {FORK_MODES} but is '{mode}'")
        return FORK_MODES.index(mode)
    if mode not in (0, 1):
        raise ValueError(f"mode should be 0 (left) or 1 (right) but is {mode}")
    return int(mode)


def _move_towards(pos, target, dt):
    v = target - pos
    dist = float(np.hypot(v[0], v[1]))
    if dist < 1e-9:
        return np.zeros(2)
    return v / dist * min(1.0, dist / dt)


def fork_expert(state, mode) -> np.ndarray:
    """Waypoint controller detouring through ``(-0.4, 0.5)`` (left) or ``(0.4, 0.5)`` (right).

    The agent heads for the waypoint while it is below the obstacle's center line,
    then for the goal. Speeds saturate at 1 so the agent lands exactly on targets.
    """
    pos = np.asarray(state, dtype=np.float64)[:2]
    sign = -1.0 if _mode_index(mode) == 0 else 1.0
    waypoint = np.array([sign * WAYPOINT_X, OBSTACLE_CENTER[1]])
    target = waypoint if pos[1] < OBSTACLE_CENTER[1] - 1e-3 else GOAL
    return _move_towards(pos, target, DT)


class Fork2DEnv:
    """Reach ``(0, 1)`` from the origin around an obstacle at ``(0, 0.5)``.

    Actions are 2-D velocities clamped to [-1, 1]; contact with the obstacle ends
    the episode as a failure.
    """

    tag = "fork2d"
    n_goals = 1
    action_dim = 2
    proprio_dim = 2
    state_dim = 2
    n_cameras = 2
    max_steps = 40
    success_radius = 0.05

    def __init__(self, image_size: int = 32, init_noise: float = 0.02):
        self.image_size = image_size
        self.init_noise = init_noise
        self.state = np.zeros(2)
        self.goal_id = 0
        self.step_count = 0
        self.collided = False

    def reset(self, seed=None, goal_id: int = 0) -> Observation:
        if goal_id != 0:
            raise ValueError(f"fork2d has a single goal but goal id {goal_id} was requested")
        rng = np.random.default_rng(seed)
        self.state = np.array([rng.uniform(-self.init_noise, self.init_noise), 0.0]) if self.init_noise else np.zeros(2)
        self.goal_id = goal_id
        self.step_count = 0
        self.collided = False
        return self.observe()

    @property
    def success(self) -> bool:
        return (not self.collided) and float(np.hypot(*(self.state - GOAL))) <= self.success_radius

    @property
    def done(self) -> bool:
        return self.collided or self.success or self.step_count >= self.max_steps

    def expert(self, mode) -> np.ndarray:
        return fork_expert(self.state, mode)

    def step(self, action):
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if action.shape != (2,):
            raise ValueError(f"fork2d actions are 2-D velocities but got shape {action.shape}")
        self.state = self.state + DT * action
        self.step_count += 1
        if np.hypot(*(self.state - OBSTACLE_CENTER)) < OBSTACLE_RADIUS:
            self.collided = True
        return self.observe(), self.done

    def render(self) -> np.ndarray:
        """Global view and an agent-centered crop, ``(2, 3, size, size)``."""
        discs = [
            Disc(tuple(OBSTACLE_CENTER), OBSTACLE_RADIUS, (1.0, 0.0, 0.0)),
            Disc(tuple(GOAL), self.success_radius, (0.0, 1.0, 0.0)),
            Disc(tuple(self.state), 0.04, (0.0, 0.0, 1.0)),
        ]
        views = [View((0.0, 0.5), 1.4), View(tuple(self.state), 0.6)]
        return np.stack([rasterize(discs, v, self.image_size) for v in views])

    def observe(self) -> Observation:
        return Observation(images=self.render(), proprio=self.state.astype(np.float32))
