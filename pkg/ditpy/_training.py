"""Behavior-cloning training: chunk batches, the noise-prediction loss, AdamW and gradient checks."""
import copy
import dataclasses
import json
import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch
from torch import Tensor

from ._config import RunConfig
from ._policy import PolicyConfig, PolicyNet, RegressionPolicy, init_policy, init_regression_policy
from ._schedule import NoiseSchedule, forward_noise

__all__ = [
    "DivergenceError",
    "Batch",
    "ChunkSampler",
    "TrainResult",
    "bind_model_config",
    "random_batch",
    "perturb_zero_parameters",
    "diffusion_loss",
    "regression_loss",
    "objective_loss",
    "lr_factor",
    "grad_check",
    "loss_at_init",
    "train",
]

_LG = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, iteration: int, loss: float, diagnostics: dict = None):
        self.iteration = iteration
        self.loss = loss
        self.diagnostics = diagnostics or {}
        super().__init__(f"training diverged at iteration {iteration} (loss={loss}, {self.diagnostics})")


@dataclasses.dataclass
class Batch:
    """A training batch; ``k`` and ``eps`` are drawn when the batch is assembled.

    ``action_mask`` is 1 on real chunk steps and 0 on the zero padding past the end
    of an episode.
    """

    images: Tensor
    proprio: Tensor
    proprio_mask: Tensor
    goal_ids: Tensor
    actions: Tensor
    action_mask: Tensor
    k: Tensor
    eps: Tensor

    def __len__(self):
        return self.actions.shape[0]

    def to(self, dtype) -> "Batch":
        floats = ("images", "proprio", "proprio_mask", "actions", "action_mask", "eps")
        return dataclasses.replace(self, **{name: getattr(self, name).to(dtype) for name in floats})


class ChunkSampler:
    """Draws batches of ``horizon``-long action chunks from an :class:`EpisodeDataset`.

    Start indices are uniform over the steps of a uniformly chosen episode; the
    observation dropout masks are drawn here so a batch is fully determined by the
    sampler seed.
    """

    def __init__(self, dataset, horizon: int, K: int, p_drop: float = 0.0, seed: int = 0):
        if len(dataset) == 0:
            raise ValueError("cannot sample chunks from an empty dataset")
        self.dataset = dataset
        self.horizon = horizon
        self.K = K
        self.p_drop = p_drop
        self.rng = np.random.default_rng(seed)

    def sample(self, batch_size: int) -> Batch:
        rng = self.rng
        data = self.dataset
        H = self.horizon
        A = data.actions[0].shape[1]
        P = data.proprio[0].shape[1]

        images, proprio, goals = [], [], []
        actions = np.zeros((batch_size, H, A), dtype=np.float32)
        mask = np.zeros((batch_size, H), dtype=np.float32)
        for b, e in enumerate(rng.integers(0, len(data), size=batch_size)):
            episode = data.episodes[e]
            t = int(rng.integers(0, len(episode)))
            chunk = data.actions[e][t : t + H]
            actions[b, : len(chunk)] = chunk
            mask[b, : len(chunk)] = 1.0
            images.append(episode.images[t])
            proprio.append(data.proprio[e][t])
            goals.append(episode.goal_id)

        k = rng.integers(0, self.K, size=batch_size)
        eps = rng.standard_normal((batch_size, H, A))
        keep = (rng.random((batch_size, P)) >= self.p_drop).astype(np.float32)
        return Batch(
            images=torch.as_tensor(np.stack(images)),
            proprio=torch.as_tensor(np.stack(proprio)),
            proprio_mask=torch.as_tensor(keep),
            goal_ids=torch.as_tensor(np.asarray(goals, dtype=np.int64)),
            actions=torch.as_tensor(actions),
            action_mask=torch.as_tensor(mask),
            k=torch.as_tensor(k, dtype=torch.long),
            eps=torch.as_tensor(eps, dtype=torch.float32),
        )


def random_batch(config: PolicyConfig, batch_size: int, seed: int = 0) -> Batch:
    """Synthetic batch with the shapes of ``config``, for gradient checks without a dataset."""
    rng = np.random.default_rng(seed)
    B, H, A, P = batch_size, config.horizon, config.action_dim, config.proprio_dim
    shape = (B, config.n_cameras, config.image_channels, config.image_size, config.image_size)
    return Batch(
        images=torch.as_tensor(rng.random(shape), dtype=torch.float32),
        proprio=torch.as_tensor(rng.uniform(-1, 1, (B, P)), dtype=torch.float32),
        proprio_mask=torch.ones(B, P),
        goal_ids=torch.as_tensor(rng.integers(0, config.n_goals, B)),
        actions=torch.as_tensor(rng.uniform(-1, 1, (B, H, A)), dtype=torch.float32),
        action_mask=torch.ones(B, H),
        k=torch.as_tensor(rng.integers(0, config.diffusion_steps, B)),
        eps=torch.as_tensor(rng.standard_normal((B, H, A)), dtype=torch.float32),
    )


def _masked_mean(err: Tensor, mask: Tensor, per_sample: bool = False) -> Tensor:
    err = err * mask[..., None]
    denom = mask.sum(dim=-1) * err.shape[-1]
    if per_sample:
        return err.sum(dim=(1, 2)) / denom
    return err.sum() / denom.sum()


def diffusion_loss(net: PolicyNet, batch: Batch, sched: NoiseSchedule, key_mask=None, per_sample=False) -> Tensor:
    """Masked MSE between the drawn noise and the network's estimate, accumulated in double precision."""
    if sched.K != net.config.diffusion_steps:
        raise ValueError(f"schedule has K={sched.K} but the policy was built for {net.config.diffusion_steps}")
    x_k = forward_noise(batch.actions, batch.k.numpy(), batch.eps, sched)
    pred = net(x_k, batch.k, batch.images, batch.proprio, batch.goal_ids, batch.proprio_mask, key_mask)
    err = (pred.to(torch.float64) - batch.eps.to(torch.float64)) ** 2
    return _masked_mean(err, batch.action_mask.to(torch.float64), per_sample)


def regression_loss(net: RegressionPolicy, batch: Batch, kind: str = "mse", key_mask=None) -> Tensor:
    """Direct chunk regression on the normalized actions (``mse`` or ``l1``)."""
    pred = net(batch.images, batch.proprio, batch.goal_ids, batch.proprio_mask, key_mask)
    diff = pred.to(torch.float64) - batch.actions.to(torch.float64)
    if kind == "mse":
        err = diff**2
    elif kind == "l1":
        err = diff.abs()
    else:
        raise ValueError(f"regression loss should be 'mse' or 'l1' but is '{kind}'")
    return _masked_mean(err, batch.action_mask.to(torch.float64))


def objective_loss(net, batch: Batch, sched: NoiseSchedule, regression_kind: str = "mse", key_mask=None) -> Tensor:
    if isinstance(net, RegressionPolicy):
        return regression_loss(net, batch, regression_kind, key_mask)
    return diffusion_loss(net, batch, sched, key_mask)


def lr_factor(iteration: int, warmup: int, total: int, min_ratio: float = 0.1) -> float:
    """Linear warmup to 1, then cosine decay to ``min_ratio`` at ``total``."""
    if iteration < warmup:
        return (iteration + 1) / warmup
    progress = min(1.0, (iteration - warmup) / max(1, total - warmup))
    return min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress))


@torch.no_grad()
def perturb_zero_parameters(net, scale: float = 1e-2, seed: int = 0) -> int:
    """Replace exactly-zero parameter entries with ``N(0, scale^2)`` draws, in place.

    Zero-initialized gates, FiLM generators and heads otherwise cut everything
    upstream of them out of the gradient. Returns the number of entries changed.
    """
    gen = torch.Generator().manual_seed(seed)
    changed = 0
    for p in net.parameters():
        zero = p == 0
        n = int(zero.sum())
        if n:
            noise = torch.randn(n, generator=gen, dtype=torch.float64).to(p.dtype) * scale
            p[zero] = noise
            changed += n
    return changed


def grad_check(
    net,
    batch: Batch,
    sched: NoiseSchedule,
    n_params_sampled: int = 200,
    h: float = 1e-5,
    seed: int = 0,
    key_mask=None,
    floor: float = 1e-6,
    perturb: float = 1e-2,
) -> float:
    """Max relative error between backprop and central finite differences.

    Runs on a double-precision copy of ``net`` whose zero entries are first
    replaced by small draws (see :func:`perturb_zero_parameters`; ``perturb=0``
    checks the copy as is). ``n_params_sampled`` scalar parameters are drawn
    without replacement. The relative error of a pair is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    net = copy.deepcopy(net).double()
    if perturb > 0:
        perturb_zero_parameters(net, perturb, seed)
    batch = batch.to(torch.float64)
    params = [p for p in net.parameters() if p.requires_grad]

    def loss_fn():
        return objective_loss(net, batch, sched, key_mask=key_mask)

    net.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_params_sampled, int(offsets[-1])), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            j = int(flat - offsets[i])
            view = params[i].view(-1)
            orig = view[j].item()
            view[j] = orig + h
            plus = loss_fn().item()
            view[j] = orig - h
            minus = loss_fn().item()
            view[j] = orig
            numeric = (plus - minus) / (2 * h)
            a = analytic[i].view(-1)[j].item()
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    _LG.debug("grad check over %d parameters: max relative error %.3e", len(picks), worst)
    return worst


@torch.no_grad()
def loss_at_init(net, dataset, sched: NoiseSchedule, n_samples: int = 512, batch_size: int = 64, seed: int = 0):
    """Mean per-sample diffusion loss of ``net`` over fresh batches and its standard error."""
    sampler = ChunkSampler(dataset, net.config.horizon, sched.K, net.config.p_drop, seed=seed)
    losses = []
    while len(losses) < n_samples:
        batch = sampler.sample(min(batch_size, n_samples - len(losses)))
        losses.extend(diffusion_loss(net, batch, sched, per_sample=True).tolist())
    losses = np.asarray(losses)
    return float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(len(losses)))


@dataclasses.dataclass
class TrainResult:
    net: torch.nn.Module
    config: RunConfig
    losses: List[float]
    log: List[dict]
    checkpoint: Optional[Path] = None

    @property
    def final_loss(self) -> float:
        """Mean loss over the last eval interval."""
        tail = self.losses[-self.config.train.eval_interval :]
        return float(np.mean(tail))


def bind_model_config(config: RunConfig, header) -> RunConfig:
    """Return ``config`` with its model section bound to the dims of a dataset header."""
    if header.env != config.env.tag:
        _LG.warning("dataset was generated on '%s' but env.tag is '%s'", header.env, config.env.tag)
    model = config.model.bind(
        n_cameras=header.n_cameras,
        image_size=header.image_size,
        proprio_dim=header.proprio_dim,
        action_dim=header.action_dim,
        n_goals=header.n_goals,
    )
    return dataclasses.replace(config, model=model).validate(bound=True)


def train(config: RunConfig, dataset, out_path=None, log_path=None) -> TrainResult:
    """Train a diffusion (or regression) policy on ``dataset``.

    AdamW with linear warmup and cosine decay; the loss of every iteration is kept
    and a record is logged every ``train.eval_interval`` iterations. The result is
    a pure function of ``(config, dataset)`` on a single thread.

    Raises:
        ValueError: when the dataset and the model config disagree.
        DivergenceError: when the loss becomes NaN or infinite.
    """
    config = bind_model_config(config, dataset.header)
    tc = config.train
    sched = config.schedule.build()
    if tc.objective == "diffusion":
        net = init_policy(config.model, seed=tc.seed)
    else:
        net = init_regression_policy(config.model, seed=tc.seed)
    net.train()

    optimizer = torch.optim.AdamW(net.parameters(), lr=tc.lr, betas=(0.9, 0.999), weight_decay=tc.weight_decay)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda it: lr_factor(it, tc.warmup, tc.iterations, tc.min_lr_ratio)
    )
    sampler = ChunkSampler(dataset, config.model.horizon, sched.K, config.model.p_drop, seed=tc.seed)

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w")

    losses, records = [], []
    start = time.time()
    try:
        for it in range(tc.iterations):
            batch = sampler.sample(tc.batch_size)
            lr = optimizer.param_groups[0]["lr"]
            loss = objective_loss(net, batch, sched, tc.regression_loss)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    it, float(loss), {"lr": lr, "k_min": int(batch.k.min()), "k_max": int(batch.k.max())}
                )
            optimizer.zero_grad()
            loss.backward()
            max_norm = tc.grad_clip if tc.grad_clip > 0 else float("inf")
            grad_norm = float(torch.nn.utils.clip_grad_norm_(net.parameters(), max_norm))
            optimizer.step()
            scheduler.step()
            losses.append(float(loss))

            if (it + 1) % tc.eval_interval == 0 or it + 1 == tc.iterations:
                record = {
                    "iteration": it + 1,
                    "loss": float(np.mean(losses[-tc.eval_interval :])),
                    "lr": lr,
                    "grad_norm": grad_norm,
                    "wall_time": time.time() - start,
                }
                records.append(record)
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
                _LG.info("iter %d loss %.4f lr %.2e grad_norm %.3f", it + 1, record["loss"], lr, grad_norm)
    finally:
        if log_file is not None:
            log_file.close()

    net.eval()
    result = TrainResult(net=net, config=config, losses=losses, log=records)
    if out_path is not None:
        from ._checkpoint import save_checkpoint

        result.checkpoint = save_checkpoint(out_path, net, dataset.stats, run_config=config)
    return result
