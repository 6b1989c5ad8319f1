"""Noise schedules, forward diffusion and the DDPM/DDIM reverse samplers.

Everything in this module is plain numpy in double precision and does not know
about the network: samplers take an ``eps_fn(x, k)`` callable.
"""
import dataclasses
import math
from typing import Callable, Optional, Tuple

import numpy as np

__all__ = [
    "NoiseSchedule",
    "DiffusionState",
    "make_cosine_schedule",
    "make_linear_schedule",
    "forward_noise",
    "predict_x0",
    "ddpm_step",
    "ddim_step",
    "ddim_timesteps",
    "ddim_sample",
    "ddpm_sample",
]

BETA_MAX = 0.999
DEFAULT_CLIP = (-1.0, 1.0)


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed DDPM coefficients for ``K`` steps.

    ``alpha_coeff``, ``gamma_coeff`` and ``sigma_coeff`` are the per-step terms of
    the ancestral update ``x_{k-1} = alpha * (x_k - gamma * eps) + sigma * z``.
    """

    K: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    alpha_coeff: np.ndarray
    gamma_coeff: np.ndarray
    sigma_coeff: np.ndarray

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 2:
            raise ValueError(f"betas should be a 1-D array with at least 2 entries but has shape {betas.shape}")
        if np.any(betas < 0) or np.any(betas > BETA_MAX):
            raise ValueError(f"betas should be in [0, {BETA_MAX}]")

        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])

        alpha_coeff = 1.0 / np.sqrt(alphas)
        gamma_coeff = betas / np.sqrt(1.0 - alpha_bars)
        # posterior variance, zero at the last step towards the data
        sigma_coeff = np.sqrt(betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars))

        return cls(
            K=len(betas),
            betas=_frozen(betas),
            alphas=_frozen(alphas),
            alpha_bars=_frozen(alpha_bars),
            alpha_coeff=_frozen(alpha_coeff),
            gamma_coeff=_frozen(gamma_coeff),
            sigma_coeff=_frozen(sigma_coeff),
        )

    def check_step(self, k):
        if not (np.issubdtype(type(k), np.integer) and 0 <= k < self.K):
            raise ValueError(f"step index should be an int in [0, {self.K}) but is {k}")


@dataclasses.dataclass(frozen=True)
class DiffusionState:
    x: np.ndarray
    k: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise ValueError(f"diffusion state at step {self.k} is not finite")


def _cosine_alpha_bar(u, K, s):
    return np.cos(((u / K + s) / (1 + s)) * math.pi / 2) ** 2


def make_cosine_schedule(K: int = 100, s: float = 0.008) -> NoiseSchedule:
    """Cosine schedule: ``alpha_bar(u) = f(u) / f(0)``, ``f(u) = cos^2(((u/K + s)/(1+s)) pi/2)``.

    Args:
        K (int): number of diffusion steps. Defaults to 100.
        s (float): small offset keeping the first betas away from 0. Defaults to 0.008.

    Returns:
        NoiseSchedule: betas are clipped to ``0.999``.
    """
    if not np.issubdtype(type(K), np.integer) or K < 2:
        raise ValueError(f"K should be an int >= 2 but is {K}")
    if not s > 0:
        raise ValueError(f"offset s should be positive but is {s}")

    u = np.arange(K + 1, dtype=np.float64)
    f = _cosine_alpha_bar(u, K, s)
    betas = np.minimum(1.0 - f[1:] / f[:-1], BETA_MAX)

    sched = NoiseSchedule.from_betas(betas)
    assert np.all(np.diff(sched.alpha_bars) < 0), "alpha_bars should be strictly decreasing"
    return sched


def make_linear_schedule(K: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if K < 2:
        raise ValueError(f"K should be >= 2 but is {K}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, K))


def _coeff(values, k, like):
    """Index ``values`` by ``k`` and broadcast against ``like`` (numpy array or torch tensor)."""
    c = values[k]
    if type(like).__module__.startswith("torch"):
        import torch

        c = torch.as_tensor(c, dtype=like.dtype, device=like.device)
        if c.ndim > 0:
            c = c.reshape(c.shape + (1,) * (like.ndim - c.ndim))
        return c
    c = np.asarray(c)
    if c.ndim > 0:
        c = c.reshape(c.shape + (1,) * (np.ndim(like) - c.ndim))
    return c


def forward_noise(a0, k, eps, sched: NoiseSchedule):
    """Closed-form forward process ``sqrt(ab_k) a0 + sqrt(1 - ab_k) eps``.

    ``k`` may be a scalar or one index per leading batch entry; ``a0`` and ``eps``
    may be numpy arrays or torch tensors.
    """
    if tuple(a0.shape) != tuple(eps.shape):
        raise ValueError(f"a0 and eps should have the same shape but have {tuple(a0.shape)} and {tuple(eps.shape)}")
    if np.any(np.asarray(k) < 0) or np.any(np.asarray(k) >= sched.K):
        raise ValueError(f"step index should be in [0, {sched.K}) but is {k}")

    sqrt_ab = _coeff(np.sqrt(sched.alpha_bars), k, a0)
    sqrt_1m_ab = _coeff(np.sqrt(1.0 - sched.alpha_bars), k, a0)
    return sqrt_ab * a0 + sqrt_1m_ab * eps


def predict_x0(state: DiffusionState, eps_hat, sched: NoiseSchedule, clip: Optional[Tuple[float, float]] = None):
    """Invert the forward process for the clean sample given a noise estimate."""
    sched.check_step(state.k)
    if np.shape(eps_hat) != np.shape(state.x):
        raise ValueError(f"eps_hat should have shape {np.shape(state.x)} but has {np.shape(eps_hat)}")

    ab = sched.alpha_bars[state.k]
    x0 = (state.x - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
    if clip is not None:
        x0 = np.clip(x0, clip[0], clip[1])
    return x0


def ddpm_step(state: DiffusionState, eps_hat, sched: NoiseSchedule, noise) -> DiffusionState:
    """Ancestral DDPM update from step ``k`` to ``k - 1``.

    The noise term is added outside the ``alpha`` scaling, the standard DDPM form.
    """
    sched.check_step(state.k)
    if state.k < 1:
        raise ValueError("ddpm_step needs k >= 1; use predict_x0 for the final readout")
    if np.shape(eps_hat) != np.shape(state.x) or np.shape(noise) != np.shape(state.x):
        raise ValueError("eps_hat and noise should have the shape of the state")

    k = state.k
    x = sched.alpha_coeff[k] * (state.x - sched.gamma_coeff[k] * eps_hat) + sched.sigma_coeff[k] * noise
    return DiffusionState(x=x, k=k - 1)


def ddim_step(
    state: DiffusionState,
    eps_hat,
    k_prev: int,
    sched: NoiseSchedule,
    clip: Optional[Tuple[float, float]] = DEFAULT_CLIP,
) -> DiffusionState:
    """Deterministic (eta = 0) DDIM update from ``state.k`` to ``k_prev``."""
    sched.check_step(state.k)
    if not (np.issubdtype(type(k_prev), np.integer) and 0 <= k_prev < state.k):
        raise ValueError(f"k_prev should be in [0, {state.k}) but is {k_prev}")

    x0 = predict_x0(state, eps_hat, sched, clip=clip)
    ab_prev = sched.alpha_bars[k_prev]
    x = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_hat
    return DiffusionState(x=x, k=int(k_prev))


def ddim_timesteps(K: int, steps: int) -> np.ndarray:
    """Evenly spaced decreasing indices from ``K - 1`` to ``0``, both endpoints included."""
    if steps < 1:
        raise ValueError(f"steps should be >= 1 but is {steps}")
    if steps > K:
        raise ValueError(f"steps should be <= K={K} but is {steps}")
    if steps == 1:
        # single jump from the noise end to the data end
        return np.array([K - 1, 0])
    return np.round(np.linspace(K - 1, 0, steps)).astype(np.int64)


def ddim_sample(
    eps_fn: Callable,
    sched: NoiseSchedule,
    steps: int,
    seed: int,
    shape: Tuple[int, int],
    clip: Optional[Tuple[float, float]] = DEFAULT_CLIP,
    final_readout: bool = False,
) -> np.ndarray:
    """Sample with deterministic DDIM over ``steps`` indices.

    Args:
        eps_fn (callable): ``eps_fn(x, k) -> eps_hat`` with ``x`` of ``shape``.
        sched (NoiseSchedule): the schedule the network was trained with.
        steps (int): length of the index subsequence.
        seed (int): seed of the initial Gaussian draw.
        shape (tuple): ``(H, A)``.
        clip (tuple, optional): range applied to the clean-sample estimate. Defaults to ``(-1, 1)``.
        final_readout (bool, optional): return the clean estimate at step 0 instead of ``x_0``. Defaults to False.

    Returns:
        np.ndarray: the sampled chunk.
    """
    timesteps = ddim_timesteps(sched.K, steps)
    rng = np.random.default_rng(seed)
    state = DiffusionState(x=rng.standard_normal(shape), k=int(timesteps[0]))

    for k_prev in timesteps[1:]:
        eps_hat = np.asarray(eps_fn(state.x, state.k), dtype=np.float64)
        state = ddim_step(state, eps_hat, int(k_prev), sched, clip=clip)

    if final_readout:
        eps_hat = np.asarray(eps_fn(state.x, state.k), dtype=np.float64)
        return predict_x0(state, eps_hat, sched, clip=clip)
    return state.x


def ddpm_sample(
    eps_fn: Callable,
    sched: NoiseSchedule,
    seed: int,
    shape: Tuple[int, int],
    clip: Optional[Tuple[float, float]] = DEFAULT_CLIP,
) -> np.ndarray:
    """Full ``K``-step ancestral sampling followed by the step-0 readout."""
    rng = np.random.default_rng(seed)
    state = DiffusionState(x=rng.standard_normal(shape), k=sched.K - 1)

    while state.k > 0:
        eps_hat = np.asarray(eps_fn(state.x, state.k), dtype=np.float64)
        state = ddpm_step(state, eps_hat, sched, rng.standard_normal(shape))

    eps_hat = np.asarray(eps_fn(state.x, state.k), dtype=np.float64)
    return predict_x0(state, eps_hat, sched, clip=clip)
