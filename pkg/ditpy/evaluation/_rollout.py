"""Closed-loop rollouts of trained policies in the desk environments."""
import concurrent.futures
import dataclasses
import logging
import time
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
import torch

from .._policy import GoalSpec, Observation, RegressionPolicy, sample_actions
from .._schedule import NoiseSchedule, ddim_timesteps
from ..envs import Episode, Fork2DEnv, make_env
from ._ensemble import EnsembleBuffer, temporal_ensemble
from ._metrics import ModeCoverage, SuccessStats, mode_coverage, success_stats

__all__ = [
    "RolloutResult",
    "PolicyEvaluation",
    "DecisionPoint",
    "chunk_seed",
    "make_chunk_fn",
    "run_policy",
    "rollout",
    "evaluate_policy",
    "decision_point_velocity",
    "network_evaluations",
]

_LG = logging.getLogger(__name__)

ChunkFn = Callable[[Observation, int], np.ndarray]


class RolloutResult(NamedTuple):
    episode: Episode
    success: bool
    n_chunks: int
    chunk_time: float


class DecisionPoint(NamedTuple):
    mean_x: float
    mean_abs_x: float
    n: int


@dataclasses.dataclass
class PolicyEvaluation:
    results: List[RolloutResult]
    success: SuccessStats
    coverage: Optional[ModeCoverage]
    nfe: int

    @property
    def episodes(self):
        return [r.episode for r in self.results]

    @property
    def latency_ms(self) -> float:
        """Mean wall time of one chunk prediction."""
        chunks = sum(r.n_chunks for r in self.results)
        return 1000.0 * sum(r.chunk_time for r in self.results) / max(1, chunks)


def chunk_seed(seed: int, t: int) -> int:
    """Seed of the reverse-process draw for the chunk predicted at env step ``t``."""
    return int(np.random.SeedSequence([seed, t]).generate_state(1)[0])


def network_evaluations(sampler: str, steps: int, K: int) -> int:
    if sampler == "ddpm":
        return K
    return len(ddim_timesteps(K, steps)) - 1


def _normalized(obs: Observation, stats) -> Observation:
    return Observation(images=obs.images, proprio=stats.normalize_proprio(obs.proprio))


def make_chunk_fn(net, stats, goal: GoalSpec, sched: NoiseSchedule = None, ddim_steps: int = 10,
                  sampler: str = "ddim") -> ChunkFn:
    """``chunk_fn(obs, seed) -> (H, A)`` chunk in env units for a diffusion or regression policy."""
    if isinstance(net, RegressionPolicy):
        goal.check(net.config.n_goals)

        @torch.no_grad()
        def regress(obs, seed):
            norm = _normalized(obs, stats)
            images = torch.as_tensor(norm.images, dtype=net.dtype)[None]
            proprio = torch.as_tensor(norm.proprio, dtype=net.dtype)[None]
            pred = net(images, proprio, torch.tensor([goal.goal_id]))[0]
            return stats.unnormalize_actions(pred.to(torch.float64).numpy())

        return regress

    if sched is None:
        raise ValueError("diffusion policies need a noise schedule")

    def diffuse(obs, seed):
        chunk = sample_actions(net, _normalized(obs, stats), goal, sched, ddim_steps, seed, sampler, stats=stats)
        return chunk.actions

    return diffuse


def run_policy(env, chunk_fn: ChunkFn, horizon: int, goal_id: int = 0, seed: int = 0, ensemble_on: bool = True,
               decay: float = 0.1) -> RolloutResult:
    """Execute ``chunk_fn`` in ``env`` from ``reset(seed)``.

    With ensembling a chunk is predicted at every step and the executed action is
    the temporal ensemble; otherwise a chunk is predicted every ``horizon`` steps
    and executed open loop.
    """
    obs = env.reset(seed=seed, goal_id=goal_id)
    buffer = EnsembleBuffer(horizon, decay)
    images, proprio, actions, states = [], [], [], []
    n_chunks, chunk_time = 0, 0.0
    chunk, t0 = None, 0
    t = 0
    while True:
        if ensemble_on or t % horizon == 0:
            start = time.perf_counter()
            chunk = np.asarray(chunk_fn(obs, chunk_seed(seed, t)), dtype=np.float64)
            chunk_time += time.perf_counter() - start
            n_chunks += 1
            t0 = t
            if ensemble_on:
                buffer.prune(t)
                buffer.add(chunk, t)
        action = temporal_ensemble(buffer, t) if ensemble_on else chunk[t - t0]
        action = np.clip(action, -1.0, 1.0)

        images.append(obs.images)
        proprio.append(obs.proprio)
        states.append(np.asarray(env.state, dtype=np.float32))
        actions.append(action.astype(np.float32))
        obs, done = env.step(action)
        t += 1
        if done:
            break

    success = bool(env.success)
    episode = Episode(
        goal_id=goal_id,
        images=np.stack(images),
        proprio=np.stack(proprio),
        actions=np.stack(actions),
        states=np.stack(states),
        success=success,
    )
    return RolloutResult(episode, success, n_chunks, chunk_time)


def rollout(net, env, goal: GoalSpec, sched: NoiseSchedule, ddim_steps: int, seed: int, ensemble_on: bool = True,
            stats=None, decay: float = 0.1, sampler: str = "ddim") -> RolloutResult:
    """One closed-loop episode of a diffusion policy; a pure function of the weights and ``seed``."""
    if stats is None:
        raise ValueError("rollouts need the normalization stats of the training data")
    if net.config.action_dim != env.action_dim or net.config.proprio_dim != env.proprio_dim:
        raise ValueError(f"policy dims do not match the '{env.tag}' environment")
    if net.config.n_cameras != env.n_cameras:
        raise ValueError(f"policy expects {net.config.n_cameras} cameras but '{env.tag}' renders {env.n_cameras}")
    chunk_fn = make_chunk_fn(net, stats, goal, sched, ddim_steps, sampler)
    return run_policy(env, chunk_fn, net.config.horizon, goal.goal_id, seed, ensemble_on, decay)


def evaluate_policy(net, env_tag: str, stats, eval_config, sched: NoiseSchedule = None, workers: int = 1,
                    seeds: Sequence[int] = None) -> PolicyEvaluation:
    """``eval_config.n_rollouts`` rollouts with seeds ``eval_config.seed + i``; goals cycle through the vocabulary."""
    if eval_config.n_rollouts < 1:
        raise ValueError(f"n_rollouts should be >= 1 but is {eval_config.n_rollouts}")
    seeds = list(seeds) if seeds is not None else [eval_config.seed + i for i in range(eval_config.n_rollouts)]
    n_goals = make_env(env_tag).n_goals

    def one(i_seed):
        i, seed = i_seed
        env = make_env(env_tag, image_size=net.config.image_size)
        goal = GoalSpec(i % n_goals)
        chunk_fn = make_chunk_fn(net, stats, goal, sched, eval_config.ddim_steps, eval_config.sampler)
        return run_policy(env, chunk_fn, net.config.horizon, goal.goal_id, seed, eval_config.ensemble,
                          eval_config.decay)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, enumerate(seeds)))
    else:
        results = [one(job) for job in enumerate(seeds)]

    rate = success_stats([r.success for r in results])
    coverage = mode_coverage([r.episode for r in results]) if env_tag == Fork2DEnv.tag else None
    if isinstance(net, RegressionPolicy):
        nfe = 1
    else:
        nfe = network_evaluations(eval_config.sampler, eval_config.ddim_steps, net.config.diffusion_steps)
    _LG.info("%s: success %.2f +/- %.2f over %d rollouts", env_tag, rate.rate, rate.stderr, rate.n)
    return PolicyEvaluation(results=results, success=rate, coverage=coverage, nfe=nfe)


def decision_point_velocity(net, stats, seeds: Sequence[int], sched: NoiseSchedule = None, ddim_steps: int = 10,
                            env_tag: str = Fork2DEnv.tag) -> DecisionPoint:
    """Statistics of the x-velocity of the first action predicted from reset."""
    env = make_env(env_tag, image_size=net.config.image_size)
    chunk_fn = make_chunk_fn(net, stats, GoalSpec(0), sched, ddim_steps)
    xs = []
    for seed in seeds:
        obs = env.reset(seed=seed)
        xs.append(float(np.clip(chunk_fn(obs, chunk_seed(seed, 0))[0, 0], -1.0, 1.0)))
    xs = np.asarray(xs)
    return DecisionPoint(mean_x=float(xs.mean()), mean_abs_x=float(np.abs(xs).mean()), n=len(xs))
