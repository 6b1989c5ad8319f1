"""Demonstration episodes, normalization statistics and the episode file codec.

File layout (all integers and floats little-endian)::

    magic   b"DITPYEP1"
    header  uint32 length + UTF-8 JSON (version, env tag, counts, dims)
    stats   4 arrays: proprio_min, proprio_max, action_min, action_max
    episode goal_id int32, mode int32, success uint8, then 4 arrays:
            images, proprio, actions, states

Each array is ``uint8 ndim``, ``ndim x uint32`` shape, then float32 data.
"""
import concurrent.futures
import dataclasses
import json
import logging
import struct
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .._policy import Observation
from ._fork2d import Fork2DEnv
from ._pickplace import PickPlaceEnv

__all__ = [
    "FORMAT_VERSION",
    "ENVS",
    "EpisodeFormatError",
    "Episode",
    "NormalizationStats",
    "DatasetHeader",
    "EpisodeDataset",
    "make_env",
    "run_expert_episode",
    "generate_dataset",
    "write_episodes",
    "read_episodes",
    "load_dataset",
    "summarize_episode_file",
]

_LG = logging.getLogger(__name__)

MAGIC = b"DITPYEP1"
FORMAT_VERSION = 1
ENVS = {Fork2DEnv.tag: Fork2DEnv, PickPlaceEnv.tag: PickPlaceEnv}


class EpisodeFormatError(ValueError):
    pass


def make_env(tag: str, **kwargs):
    if tag not in ENVS:
        raise ValueError(f"env tag should be one of {sorted(ENVS)} but is '{tag}'")
    return ENVS[tag](**kwargs)


@dataclasses.dataclass
class Episode:
    """One trajectory ``{g, o_0, a_0, o_1, a_1, ...}``.

    ``mode`` is the expert mode for fork2d (0 left, 1 right) and -1 otherwise.
    ``images`` may be None for rollouts recorded without pixels.
    """

    goal_id: int
    proprio: np.ndarray
    actions: np.ndarray
    states: np.ndarray
    success: bool
    mode: int = -1
    images: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.actions) == 0:
            raise ValueError("an episode should contain at least one step")
        if len(self.proprio) != len(self.actions) or len(self.states) != len(self.actions):
            raise ValueError("proprio, actions and states should have one row per step")
        if self.images is not None and len(self.images) != len(self.actions):
            raise ValueError("images should have one entry per step")

    def __len__(self):
        return len(self.actions)

    def observations(self) -> Iterator[Observation]:
        if self.images is None:
            raise ValueError("episode was recorded without images")
        for images, proprio in zip(self.images, self.proprio):
            yield Observation(images=images, proprio=proprio)


@dataclasses.dataclass
class NormalizationStats:
    """Per-dimension min/max mapping proprio and actions to [-1, 1]."""

    proprio_min: np.ndarray
    proprio_max: np.ndarray
    action_min: np.ndarray
    action_max: np.ndarray

    def __post_init__(self):
        for f in dataclasses.fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float32))
        if np.any(self.proprio_min > self.proprio_max) or np.any(self.action_min > self.action_max):
            raise ValueError("normalization stats should have min <= max in every dimension")

    @classmethod
    def from_episodes(cls, episodes: List[Episode]) -> "NormalizationStats":
        proprio = np.concatenate([e.proprio for e in episodes])
        actions = np.concatenate([e.actions for e in episodes])
        return cls(proprio.min(0), proprio.max(0), actions.min(0), actions.max(0))

    @staticmethod
    def _forward(x, lo, hi):
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, 2.0 * (x - lo) / safe - 1.0, 0.0)

    @staticmethod
    def _inverse(y, lo, hi):
        return (np.asarray(y) + 1.0) / 2.0 * (hi - lo) + lo

    def normalize_proprio(self, x):
        return self._forward(x, self.proprio_min, self.proprio_max).astype(np.float32)

    def normalize_actions(self, a):
        return self._forward(a, self.action_min, self.action_max).astype(np.float32)

    def unnormalize_actions(self, a):
        return self._inverse(a, self.action_min, self.action_max)

    def arrays(self):
        return [self.proprio_min, self.proprio_max, self.action_min, self.action_max]

    def to_dict(self):
        return {f.name: getattr(self, f.name).tolist() for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclasses.dataclass
class DatasetHeader:
    env: str
    n_episodes: int
    n_cameras: int
    image_size: int
    proprio_dim: int
    action_dim: int
    state_dim: int
    n_goals: int
    stats: NormalizationStats
    version: int = FORMAT_VERSION

    def to_json(self):
        d = dataclasses.asdict(self)
        d.pop("stats")
        return d


def _write_array(f, a):
    a = np.ascontiguousarray(a, dtype="<f4")
    f.write(struct.pack("<B", a.ndim))
    f.write(struct.pack(f"<{a.ndim}I", *a.shape))
    f.write(a.tobytes())


def _read_exact(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise EpisodeFormatError("unexpected end of episode file")
    return buf


def _read_array(f):
    (ndim,) = struct.unpack("<B", _read_exact(f, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    return np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def write_episodes(path, header: DatasetHeader, episodes: List[Episode]):
    if header.n_episodes != len(episodes):
        raise ValueError(f"header announces {header.n_episodes} episodes but {len(episodes)} were given")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        meta = json.dumps(header.to_json(), sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        for a in header.stats.arrays():
            _write_array(f, a)
        for e in episodes:
            if e.images is None:
                raise ValueError("episodes written to disk should carry images")
            f.write(struct.pack("<iiB", e.goal_id, e.mode, int(e.success)))
            for a in (e.images, e.proprio, e.actions, e.states):
                _write_array(f, a)


def _read_header(f) -> DatasetHeader:
    if _read_exact(f, len(MAGIC)) != MAGIC:
        raise EpisodeFormatError("not a ditpy episode file")
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    meta = json.loads(_read_exact(f, n).decode("utf-8"))
    if meta.get("version") != FORMAT_VERSION:
        raise EpisodeFormatError(f"unsupported episode file version {meta.get('version')}")
    stats = NormalizationStats(*[_read_array(f) for _ in range(4)])
    return DatasetHeader(stats=stats, **meta)


def read_episodes(path, header_only: bool = False) -> Tuple[DatasetHeader, List[Episode]]:
    episodes = []
    with open(path, "rb") as f:
        header = _read_header(f)
        if header_only:
            return header, episodes
        for _ in range(header.n_episodes):
            goal_id, mode, success = struct.unpack("<iiB", _read_exact(f, 9))
            images, proprio, actions, states = (_read_array(f) for _ in range(4))
            episodes.append(
                Episode(goal_id=goal_id, proprio=proprio, actions=actions, states=states,
                        success=bool(success), mode=mode, images=images)
            )
        if f.read(1):
            raise EpisodeFormatError("trailing bytes after the last episode")
    return header, episodes


def run_expert_episode(tag: str, seed: int, goal_id: int = 0, mode: int = -1) -> Episode:
    """Roll out the scripted expert once and record observations, actions and states."""
    env = make_env(tag)
    obs = env.reset(seed=seed, goal_id=goal_id)
    images, proprio, actions, states = [], [], [], []
    while True:
        action = env.expert(mode).astype(np.float32)
        images.append(obs.images)
        proprio.append(obs.proprio)
        states.append(env.state.astype(np.float32))
        actions.append(action)
        obs, done = env.step(action)
        if done:
            break
    return Episode(
        goal_id=goal_id,
        images=np.stack(images),
        proprio=np.stack(proprio),
        actions=np.stack(actions),
        states=np.stack(states),
        success=bool(env.success),
        mode=mode,
    )


def generate_dataset(tag: str, n_episodes: int, seed: int, path=None, workers: int = 1):
    """Generate ``n_episodes`` expert demonstrations and optionally write them to ``path``.

    Episode ``i`` is reset with seed ``seed + i``, so the result does not depend on
    ``workers``. Fork2d modes are a seeded permutation of an evenly split list.

    Returns:
        (DatasetHeader, list of Episode)
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes should be >= 1 but is {n_episodes}")
    env_cls = ENVS.get(tag)
    if env_cls is None:
        raise ValueError(f"env tag should be one of {sorted(ENVS)} but is '{tag}'")

    rng = np.random.RandomState(seed)
    if tag == Fork2DEnv.tag:
        modes = rng.permutation(np.arange(n_episodes) % 2).tolist()
        goals = [0] * n_episodes
    else:
        modes = [-1] * n_episodes
        goals = rng.randint(0, env_cls.n_goals, size=n_episodes).tolist()

    jobs = [(tag, seed + i, goals[i], modes[i]) for i in range(n_episodes)]
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            episodes = list(pool.map(lambda job: run_expert_episode(*job), jobs))
    else:
        episodes = [run_expert_episode(*job) for job in jobs]

    failed = sum(not e.success for e in episodes)
    if failed:
        _LG.warning("%d/%d expert episodes failed on %s", failed, n_episodes, tag)

    first = episodes[0]
    header = DatasetHeader(
        env=tag,
        n_episodes=n_episodes,
        n_cameras=first.images.shape[1],
        image_size=first.images.shape[-1],
        proprio_dim=first.proprio.shape[1],
        action_dim=first.actions.shape[1],
        state_dim=first.states.shape[1],
        n_goals=env_cls.n_goals,
        stats=NormalizationStats.from_episodes(episodes),
    )
    if path is not None:
        write_episodes(path, header, episodes)
        _LG.info("wrote %d %s episodes to %s", n_episodes, tag, path)
    return header, episodes


@dataclasses.dataclass
class EpisodeDataset:
    """In-memory dataset with proprio and actions already normalized to [-1, 1]."""

    header: DatasetHeader
    episodes: List[Episode]

    def __post_init__(self):
        stats = self.header.stats
        self.proprio = [stats.normalize_proprio(e.proprio) for e in self.episodes]
        self.actions = [stats.normalize_actions(e.actions) for e in self.episodes]

    @property
    def stats(self) -> NormalizationStats:
        return self.header.stats

    def __len__(self):
        return len(self.episodes)


def load_dataset(path) -> EpisodeDataset:
    header, episodes = read_episodes(path)
    return EpisodeDataset(header, episodes)


def summarize_episode_file(path) -> str:
    header, episodes = read_episodes(path)
    lines = [f"episode file {path} (version {header.version})"]
    lines += [f"  {k}: {v}" for k, v in header.to_json().items() if k != "version"]
    for name, a in zip(("proprio_min", "proprio_max", "action_min", "action_max"), header.stats.arrays()):
        lines.append(f"  {name}: {np.array2string(a, precision=3)}")
    for i, e in enumerate(episodes):
        lines.append(f"  [{i}] goal={e.goal_id} mode={e.mode} steps={len(e)} success={e.success}")
    return "\n".join(lines)
