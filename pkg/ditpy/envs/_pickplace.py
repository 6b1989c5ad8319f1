"""Language-conditioned pick and place: carry the named object to the named receptacle."""
import numpy as np

from .._policy import Observation
from ._render import Disc, View, rasterize

__all__ = ["PickPlaceEnv", "pickplace_expert", "goal_to_targets"]

N_OBJECTS = 2
N_RECEPTACLES = 2
GRASP_RADIUS = 0.05
RECEPTACLE_RADIUS = 0.08
MIN_SEPARATION = 0.25
DT = 0.06

OBJECT_COLORS = ((1.0, 0.0, 0.0), (1.0, 1.0, 0.0))
RECEPTACLE_COLORS = ((0.0, 1.0, 0.0), (1.0, 0.0, 1.0))


def goal_to_targets(goal_id: int):
    """Goal ids enumerate (object, receptacle) pairs."""
    if not 0 <= goal_id < N_OBJECTS * N_RECEPTACLES:
        raise ValueError(f"goal id should be in [0, {N_OBJECTS * N_RECEPTACLES}) but is {goal_id}")
    return goal_id // N_RECEPTACLES, goal_id % N_RECEPTACLES


def _move_towards(pos, target, dt):
    v = target - pos
    dist = float(np.hypot(v[0], v[1]))
    if dist < 1e-9:
        return np.zeros(2)
    return v / dist * min(1.0, dist / dt)


def pickplace_expert(env: "PickPlaceEnv") -> np.ndarray:
    obj, rec = goal_to_targets(env.goal_id)
    gripper = env.gripper
    if env.held != obj:
        if env.held >= 0:
            return np.array([0.0, 0.0, -1.0])
        target = env.objects[obj]
        close = 1.0 if np.hypot(*(target - gripper)) < 0.04 else -1.0
        return np.concatenate([_move_towards(gripper, target, DT), [close]])

    target = env.receptacles[rec]
    if np.hypot(*(target - gripper)) < 0.02:
        return np.array([0.0, 0.0, -1.0])
    return np.concatenate([_move_towards(gripper, target, DT), [1.0]])


class PickPlaceEnv:
    """Two objects, two receptacles, four instructions.

    Actions are ``(vx, vy, grip)``; a closed gripper (grip > 0) latches onto the
    nearest object within reach and opening it releases the object.
    """

    tag = "pickplace_lang"
    n_goals = N_OBJECTS * N_RECEPTACLES
    action_dim = 3
    proprio_dim = 3
    state_dim = 2 + 1 + 1 + 2 * N_OBJECTS + 2 * N_RECEPTACLES
    n_cameras = 2
    max_steps = 60

    def __init__(self, image_size: int = 32):
        self.image_size = image_size
        self.goal_id = 0
        self.gripper = np.array([0.5, 0.1])
        self.closed = False
        self.held = -1
        self.objects = np.zeros((N_OBJECTS, 2))
        self.receptacles = np.zeros((N_RECEPTACLES, 2))
        self.step_count = 0

    def reset(self, seed=None, goal_id: int = 0) -> Observation:
        goal_to_targets(goal_id)
        rng = np.random.default_rng(seed)
        points = [np.array([0.5, 0.1])]
        while len(points) < 1 + N_OBJECTS + N_RECEPTACLES:
            p = rng.uniform(0.15, 0.85, size=2)
            if all(np.hypot(*(p - q)) >= MIN_SEPARATION for q in points):
                points.append(p)
        self.gripper = points[0].copy()
        self.objects = np.stack(points[1 : 1 + N_OBJECTS])
        self.receptacles = np.stack(points[1 + N_OBJECTS :])
        self.goal_id = goal_id
        self.closed = False
        self.held = -1
        self.step_count = 0
        return self.observe()

    @property
    def state(self) -> np.ndarray:
        return np.concatenate(
            [self.gripper, [float(self.closed), float(self.held)], self.objects.ravel(), self.receptacles.ravel()]
        )

    def is_success(self, goal_id: int) -> bool:
        obj, rec = goal_to_targets(goal_id)
        return self.held != obj and np.hypot(*(self.objects[obj] - self.receptacles[rec])) <= RECEPTACLE_RADIUS

    @property
    def success(self) -> bool:
        return self.is_success(self.goal_id)

    @property
    def done(self) -> bool:
        return self.success or self.step_count >= self.max_steps

    def expert(self, mode=None) -> np.ndarray:
        return pickplace_expert(self)

    def step(self, action):
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if action.shape != (3,):
            raise ValueError(f"pickplace actions are (vx, vy, grip) but got shape {action.shape}")

        self.closed = bool(action[2] > 0)
        if not self.closed:
            self.held = -1
        elif self.held < 0:
            dists = np.hypot(*(self.objects - self.gripper).T)
            nearest = int(np.argmin(dists))
            if dists[nearest] <= GRASP_RADIUS:
                self.held = nearest

        self.gripper = np.clip(self.gripper + DT * action[:2], 0.0, 1.0)
        if self.held >= 0:
            self.objects[self.held] = self.gripper
        self.step_count += 1
        return self.observe(), self.done

    def render(self) -> np.ndarray:
        discs = [
            Disc(tuple(p), RECEPTACLE_RADIUS, c, inner_radius=RECEPTACLE_RADIUS - 0.025)
            for p, c in zip(self.receptacles, RECEPTACLE_COLORS)
        ]
        discs += [Disc(tuple(p), 0.04, c) for p, c in zip(self.objects, OBJECT_COLORS)]
        discs.append(Disc(tuple(self.gripper), 0.025, (0.5, 0.5, 1.0) if self.closed else (0.5, 0.5, 0.5)))
        views = [View((0.5, 0.5), 1.0), View(tuple(self.gripper), 0.5)]
        return np.stack([rasterize(discs, v, self.image_size) for v in views])

    def observe(self) -> Observation:
        proprio = np.array([*self.gripper, 1.0 if self.closed else -1.0], dtype=np.float32)
        return Observation(images=self.render(), proprio=proprio)
