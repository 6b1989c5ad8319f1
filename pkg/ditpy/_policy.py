"""The noise network: observation tokenizers, block-attention encoder and the
layerwise-conditioned decoder over noised action-chunk tokens."""
import dataclasses
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor, nn

from ._blocks import (
    LN_EPS,
    CrossAttentionBlock,
    DiTBlock,
    FiLMGenerator,
    InContextBlock,
    TransformerBlock,
    TimestepEmbedder,
    block_attention_mask,
    film,
    init_dense,
    modulate,
    token_mean,
)
from ._schedule import NoiseSchedule, ddim_sample, ddpm_sample

__all__ = [
    "VARIANTS",
    "TOKENIZERS",
    "Observation",
    "GoalSpec",
    "ActionChunk",
    "PolicyConfig",
    "ImageTokenizer",
    "ObservationTokenizer",
    "ObservationEncoder",
    "PolicyNet",
    "RegressionPolicy",
    "init_policy",
    "init_regression_policy",
    "tokenize_observation",
    "encode",
    "predict_epsilon",
    "sample_actions",
    "count_parameters",
    "conv_output_size",
]

_LG = logging.getLogger(__name__)

VARIANTS = ("adaln_zero", "adaln", "cross_attn", "in_context")
TOKENIZERS = ("resnet", "conv_stem")


@dataclasses.dataclass
class Observation:
    """Per-camera images ``(n_cameras, C, H, W)`` in [0, 1] and a normalized proprio vector."""

    images: np.ndarray
    proprio: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.proprio = np.asarray(self.proprio, dtype=np.float32)
        if self.images.ndim != 4:
            raise ValueError(f"images should have shape (n_cameras, C, H, W) but have {self.images.shape}")
        if not np.all(np.isfinite(self.proprio)):
            raise ValueError("proprio should be finite")

    @property
    def n_cameras(self):
        return self.images.shape[0]


@dataclasses.dataclass(frozen=True)
class GoalSpec:
    goal_id: int

    def check(self, n_goals: int):
        if not (0 <= self.goal_id < n_goals):
            raise ValueError(f"goal id should be in [0, {n_goals}) but is {self.goal_id}")


@dataclasses.dataclass
class ActionChunk:
    actions: np.ndarray

    def __post_init__(self):
        self.actions = np.asarray(self.actions)
        if self.actions.ndim != 2:
            raise ValueError(f"an action chunk should be (H, A) but is {self.actions.shape}")

    @property
    def H(self):
        return self.actions.shape[0]

    @property
    def A(self):
        return self.actions.shape[1]


def conv_output_size(n: int, n_stages: int = 3) -> int:
    # 3x3 kernel, stride 2, padding 1
    for _ in range(n_stages):
        n = (n - 1) // 2 + 1
    return n


@dataclasses.dataclass
class PolicyConfig:
    """Architecture of the noise network.

    ``action_dim``, ``proprio_dim`` and ``n_goals`` may be left to None and bound
    from a dataset header with :meth:`bind`.
    """

    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    horizon: int = 8
    action_dim: Optional[int] = None
    proprio_dim: Optional[int] = None
    n_goals: Optional[int] = None
    n_cameras: int = 2
    image_size: int = 32
    image_channels: int = 3
    goal_dim: int = 32
    cnn_channels: Tuple[int, int, int] = (16, 32, 32)
    tokenizer: str = "resnet"
    variant: str = "adaln_zero"
    p_drop: float = 0.2
    mlp_ratio: float = 4.0
    width_multiplier: float = 1.0
    diffusion_steps: int = 100

    @property
    def width(self) -> int:
        return int(round(self.d_model * self.width_multiplier))

    @property
    def tokens_per_image(self) -> int:
        return conv_output_size(self.image_size) ** 2

    @property
    def n_obs_tokens(self) -> int:
        return self.n_cameras * self.tokens_per_image + 1

    def bind(self, n_cameras, image_size, proprio_dim, action_dim, n_goals) -> "PolicyConfig":
        """Fill unset dims from a dataset and reject explicit ones that disagree."""
        bound = dataclasses.replace(self)
        for name, value in (("proprio_dim", proprio_dim), ("action_dim", action_dim)):
            current = getattr(bound, name)
            if current is None:
                setattr(bound, name, value)
            elif current != value:
                raise ValueError(f"model.{name}={current} does not match the dataset ({value})")
        if bound.n_goals is None:
            bound.n_goals = n_goals
        elif bound.n_goals < n_goals:
            raise ValueError(f"model.n_goals={bound.n_goals} is smaller than the dataset vocabulary ({n_goals})")
        if bound.n_cameras != n_cameras:
            raise ValueError(f"model.n_cameras={bound.n_cameras} does not match the dataset ({n_cameras})")
        if bound.image_size != image_size:
            raise ValueError(f"model.image_size={bound.image_size} does not match the dataset ({image_size})")
        return bound

    def validate(self):
        for name in ("action_dim", "proprio_dim", "n_goals"):
            if getattr(self, name) is None:
                raise ValueError(f"model.{name} is unset; bind the config to a dataset first")
        for name in ("n_layers", "d_model", "n_heads", "horizon", "action_dim", "proprio_dim", "n_goals",
                     "n_cameras", "image_size", "goal_dim", "diffusion_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"model.{name} should be positive but is {getattr(self, name)}")
        if self.variant not in VARIANTS:
            raise ValueError(f"model.variant should be one of {VARIANTS} but is '{self.variant}'")
        if self.tokenizer not in TOKENIZERS:
            raise ValueError(f"model.tokenizer should be one of {TOKENIZERS} but is '{self.tokenizer}'")
        if self.width % self.n_heads:
            raise ValueError(f"width {self.width} is not divisible by {self.n_heads} heads")
        if self.width % 2:
            raise ValueError(f"width should be even but is {self.width}")
        if len(self.cnn_channels) != 3:
            raise ValueError(f"cnn_channels should list 3 stage widths but is {self.cnn_channels}")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError(f"p_drop should be in [0, 1] but is {self.p_drop}")
        return self


def _group_norm(channels):
    return nn.GroupNorm(max(1, channels // 8), channels)


class ResidualUnit(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.norm1 = _group_norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = _group_norm(c_out)
        self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride)
        self.act = nn.SiLU()

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.act(h + self.shortcut(x))


class ImageTokenizer(nn.Module):
    """One camera's CNN; every stage output is FiLM-modulated by the goal embedding.

    ``resnet``: a stride-2 stem followed by two residual stages.
    ``conv_stem``: three plain stride-2 convolutions.
    """

    def __init__(self, config: PolicyConfig):
        super().__init__()
        c1, c2, c3 = config.cnn_channels
        c_in = config.image_channels
        if config.tokenizer == "resnet":
            self.stages = nn.ModuleList(
                [
                    nn.Sequential(nn.Conv2d(c_in, c1, 3, stride=2, padding=1), _group_norm(c1), nn.SiLU()),
                    ResidualUnit(c1, c2, stride=2),
                    ResidualUnit(c2, c3, stride=2),
                ]
            )
        else:
            self.stages = nn.ModuleList(
                [
                    nn.Sequential(nn.Conv2d(a, b, 3, stride=2, padding=1), nn.SiLU())
                    for a, b in ((c_in, c1), (c1, c2), (c2, c3))
                ]
            )
        self.films = nn.ModuleList([FiLMGenerator(config.goal_dim, c) for c in (c1, c2, c3)])
        self.proj = nn.Linear(c3, config.width)
        init_dense(self.proj)

    def forward(self, image: Tensor, goal_embedding: Tensor) -> Tensor:
        h = image
        for stage, film_gen in zip(self.stages, self.films):
            gamma, beta = film_gen(goal_embedding)
            h = film(stage(h), gamma, beta)
        # (B, C, h, w) -> (B, h*w, C)
        return self.proj(h.flatten(2).transpose(1, 2))


class ObservationTokenizer(nn.Module):
    def __init__(self, config: PolicyConfig):
        super().__init__()
        self.config = config
        self.goal_embedding = nn.Embedding(config.n_goals, config.goal_dim)
        nn.init.normal_(self.goal_embedding.weight, std=1.0)
        self.cameras = nn.ModuleList([ImageTokenizer(config) for _ in range(config.n_cameras)])
        self.proprio = nn.Linear(config.proprio_dim, config.width)
        init_dense(self.proprio)
        self.pos = nn.Parameter(torch.zeros(1, config.n_obs_tokens, config.width))
        nn.init.normal_(self.pos, std=0.02)

    def forward(self, images: Tensor, proprio: Tensor, goal_ids: Tensor, proprio_mask: Optional[Tensor] = None):
        """
        Args:
            images (Tensor): ``(B, n_cameras, C, H, W)``.
            proprio (Tensor): ``(B, P)``.
            goal_ids (Tensor): ``(B,)`` integer goal ids.
            proprio_mask (Tensor, optional): ``(B, P)`` keep mask of the observation dropout.

        Returns:
            Tensor: ``(B, n_obs_tokens, width)``.
        """
        if images.shape[1] != len(self.cameras):
            raise ValueError(f"expected {len(self.cameras)} cameras but got {images.shape[1]}")
        if torch.any(goal_ids < 0) or torch.any(goal_ids >= self.config.n_goals):
            raise ValueError(f"goal ids should be in [0, {self.config.n_goals})")

        g = self.goal_embedding(goal_ids)
        tokens = [tok(images[:, i], g) for i, tok in enumerate(self.cameras)]
        if proprio_mask is not None:
            proprio = proprio * proprio_mask
        tokens.append(self.proprio(proprio)[:, None])
        return torch.cat(tokens, dim=1) + self.pos

    def camera_token_mask(self, keep_cameras: Sequence[bool], batch_size: int) -> Tensor:
        """Key mask dropping whole cameras from the encoder; the proprio token is kept."""
        n = self.config.tokens_per_image
        mask = [torch.full((n,), bool(keep)) for keep in keep_cameras]
        mask.append(torch.ones(1, dtype=torch.bool))
        return torch.cat(mask)[None].expand(batch_size, -1)

    def camera_groups(self) -> List[int]:
        """Block-attention group id per token: camera ``i`` is group ``i``, proprio the last group."""
        n = self.config.tokens_per_image
        return [i for i in range(len(self.cameras)) for _ in range(n)] + [len(self.cameras)]


class ObservationEncoder(nn.Module):
    """Stack of pre-LN self-attention layers; every layer's output is kept as ``e^(i)``.

    Tokens form a single attention group by default; ``groups`` restricts attention
    to within-group blocks.
    """

    def __init__(self, config: PolicyConfig):
        super().__init__()
        self.layers = nn.ModuleList(
            [TransformerBlock(config.width, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers)]
        )

    def forward(self, tokens: Tensor, key_mask: Optional[Tensor] = None, groups=None) -> List[Tensor]:
        attn_mask = None if groups is None else block_attention_mask(groups).to(tokens.device)
        embeddings = []
        x = tokens
        for layer in self.layers:
            x = layer(x, key_mask=key_mask, attn_mask=attn_mask)
            embeddings.append(x)
        return embeddings


class PolicyNet(nn.Module):
    """Noise prediction network ``eps_theta(x_k, k, o, g)``.

    Decoder layer ``i`` is conditioned on the encoder output ``e^(i)``; how depends on
    ``config.variant``.
    """

    def __init__(self, config: PolicyConfig):
        super().__init__()
        config.validate()
        self.config = config
        width = config.width

        self.tokenizer = ObservationTokenizer(config)
        self.encoder = ObservationEncoder(config)
        self.time_embedder = TimestepEmbedder(width)
        self.action_in = nn.Linear(config.action_dim, width)
        init_dense(self.action_in)
        self.action_pos = nn.Parameter(torch.zeros(1, config.horizon, width))
        nn.init.normal_(self.action_pos, std=0.02)

        variant = config.variant
        if variant in ("adaln_zero", "adaln"):
            zero = variant == "adaln_zero"
            self.decoder = nn.ModuleList(
                [DiTBlock(width, config.n_heads, config.mlp_ratio, zero_init=zero) for _ in range(config.n_layers)]
            )
            self.final_norm = nn.LayerNorm(width, eps=LN_EPS, elementwise_affine=False)
            self.final_modulation = nn.Linear(width, 2 * width)
            init_dense(self.final_modulation, zero=zero)
        elif variant == "cross_attn":
            self.decoder = nn.ModuleList(
                [CrossAttentionBlock(width, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers)]
            )
            self.final_norm = nn.LayerNorm(width, eps=LN_EPS)
            self.final_modulation = None
        else:
            self.decoder = nn.ModuleList(
                [InContextBlock(width, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers)]
            )
            # segment 0 marks memory tokens, segment 1 marks action tokens
            self.segment = nn.Parameter(torch.zeros(2, width))
            nn.init.normal_(self.segment, std=0.02)
            self.final_norm = nn.LayerNorm(width, eps=LN_EPS)
            self.final_modulation = None

        self.head = nn.Linear(width, config.action_dim)
        init_dense(self.head, zero=variant == "adaln_zero")

    @property
    def dtype(self):
        return self.head.weight.dtype

    def tokenize(self, images, proprio, goal_ids, proprio_mask=None):
        return self.tokenizer(images, proprio, goal_ids, proprio_mask)

    def encode(self, tokens, key_mask=None, groups=None):
        return self.encoder(tokens, key_mask=key_mask, groups=groups)

    def forward(
        self,
        x_k: Tensor,
        k: Tensor,
        images: Tensor,
        proprio: Tensor,
        goal_ids: Tensor,
        proprio_mask: Optional[Tensor] = None,
        key_mask: Optional[Tensor] = None,
    ) -> Tensor:
        """Batched noise prediction; returns ``(B, H, A)``."""
        tokens = self.tokenize(images, proprio, goal_ids, proprio_mask)
        embeddings = self.encode(tokens, key_mask=key_mask)
        t = self.time_embedder(k)

        x = self.action_in(x_k) + self.action_pos
        variant = self.config.variant
        if variant == "in_context":
            x = x + self.segment[1]
            horizon = x.shape[1]
            mem_mask = None
            if key_mask is not None:
                ones = torch.ones_like(key_mask[:, :1])
                mem_mask = torch.cat([ones, key_mask, ones.expand(-1, horizon)], dim=1)

        for block, e in zip(self.decoder, embeddings):
            if variant in ("adaln_zero", "adaln"):
                x = block(x, token_mean(e, key_mask) + t)
            elif variant == "cross_attn":
                x = block(x, e, t, key_mask=key_mask)
            else:
                memory = torch.cat([t[:, None], e], dim=1) + self.segment[0]
                x = block(torch.cat([memory, x], dim=1), key_mask=mem_mask)[:, -horizon:]

        if self.final_modulation is not None:
            c = token_mean(embeddings[-1], key_mask) + t
            shift, scale = self.final_modulation(c).chunk(2, dim=-1)
            x = modulate(self.final_norm(x), shift, scale)
        else:
            x = self.final_norm(x)
        return self.head(x)


class RegressionPolicy(nn.Module):
    """Same tokenizers and encoder as :class:`PolicyNet`; the diffusion decoder is
    replaced by an MLP regressing the whole chunk from the final token mean."""

    def __init__(self, config: PolicyConfig):
        super().__init__()
        config.validate()
        self.config = config
        width = config.width
        self.tokenizer = ObservationTokenizer(config)
        self.encoder = ObservationEncoder(config)
        self.norm = nn.LayerNorm(width, eps=LN_EPS)
        self.fc1 = nn.Linear(width, 4 * width)
        self.fc2 = nn.Linear(4 * width, config.horizon * config.action_dim)
        init_dense(self.fc1)
        init_dense(self.fc2)

    @property
    def dtype(self):
        return self.fc2.weight.dtype

    def forward(self, images, proprio, goal_ids, proprio_mask=None, key_mask=None) -> Tensor:
        tokens = self.tokenizer(images, proprio, goal_ids, proprio_mask)
        e = self.encoder(tokens, key_mask=key_mask)[-1]
        h = torch.nn.functional.silu(self.fc1(self.norm(token_mean(e, key_mask))))
        return self.fc2(h).reshape(-1, self.config.horizon, self.config.action_dim)


def _seeded_build(cls, config: PolicyConfig, seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = cls(config)
    return net


def init_policy(config: PolicyConfig, seed: int = 0) -> PolicyNet:
    """Build a :class:`PolicyNet` reproducibly from ``seed``.

    In the ``adaln_zero`` variant the adaLN gate projections, the final modulation
    and the output head start at zero, so the fresh network predicts exactly 0.
    """
    net = _seeded_build(PolicyNet, config, seed)
    _LG.debug("initialized %s policy with %d parameters", config.variant, count_parameters(net))
    return net


def init_regression_policy(config: PolicyConfig, seed: int = 0) -> RegressionPolicy:
    return _seeded_build(RegressionPolicy, config, seed)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def _observation_tensors(net, obs: Observation, goal: GoalSpec, proprio_mask=None):
    config = net.config
    if obs.n_cameras != config.n_cameras:
        raise ValueError(f"observation has {obs.n_cameras} cameras but the policy expects {config.n_cameras}")
    if obs.proprio.shape != (config.proprio_dim,):
        raise ValueError(f"proprio should have shape ({config.proprio_dim},) but has {obs.proprio.shape}")
    goal.check(config.n_goals)

    images = torch.as_tensor(obs.images, dtype=net.dtype)[None]
    proprio = torch.as_tensor(obs.proprio, dtype=net.dtype)[None]
    goal_ids = torch.tensor([goal.goal_id], dtype=torch.long)
    if proprio_mask is not None:
        proprio_mask = torch.as_tensor(proprio_mask, dtype=net.dtype)[None]
    return images, proprio, goal_ids, proprio_mask


def _dropout_mask(config: PolicyConfig, train_mode: bool, rng) -> np.ndarray:
    if not train_mode:
        return np.ones(config.proprio_dim)
    if rng is None:
        raise ValueError("train mode needs an rng for the observation dropout")
    return (rng.random(config.proprio_dim) >= config.p_drop).astype(np.float64)


@torch.no_grad()
def tokenize_observation(net: PolicyNet, obs: Observation, goal: GoalSpec, train_mode: bool = False, rng=None) -> Tensor:
    """Tokens ``(n_obs_tokens, width)`` of one observation; dropout on proprio in train mode."""
    mask = _dropout_mask(net.config, train_mode, rng)
    images, proprio, goal_ids, mask = _observation_tensors(net, obs, goal, mask)
    return net.tokenize(images, proprio, goal_ids, mask)[0]


@torch.no_grad()
def encode(net: PolicyNet, tokens: Tensor) -> List[Tensor]:
    batched = tokens.ndim == 2
    out = net.encode(tokens[None] if batched else tokens)
    return [e[0] for e in out] if batched else out


@torch.no_grad()
def predict_epsilon(
    net: PolicyNet,
    x_k,
    k: int,
    obs: Observation,
    goal: GoalSpec,
    train_mode: bool = False,
    rng=None,
) -> np.ndarray:
    """Noise estimate ``(H, A)`` for one noised chunk, in double precision."""
    config = net.config
    x_k = np.asarray(x_k, dtype=np.float64)
    if x_k.shape != (config.horizon, config.action_dim):
        raise ValueError(f"x_k should have shape ({config.horizon}, {config.action_dim}) but has {x_k.shape}")
    if not np.all(np.isfinite(x_k)):
        raise ValueError("x_k contains NaN or inf")
    if not (np.issubdtype(type(k), np.integer) and 0 <= k < config.diffusion_steps):
        raise ValueError(f"step index should be in [0, {config.diffusion_steps}) but is {k}")

    mask = _dropout_mask(config, train_mode, rng)
    images, proprio, goal_ids, mask = _observation_tensors(net, obs, goal, mask)
    eps = net(
        torch.as_tensor(x_k, dtype=net.dtype)[None],
        torch.tensor([int(k)]),
        images,
        proprio,
        goal_ids,
        proprio_mask=mask,
    )
    return eps[0].to(torch.float64).numpy()


def sample_actions(
    net: PolicyNet,
    obs: Observation,
    goal: GoalSpec,
    sched: NoiseSchedule,
    steps: int = 10,
    seed: int = 0,
    sampler: str = "ddim",
    stats=None,
) -> ActionChunk:
    """Draw an action chunk by running the reverse process on ``net``.

    The chunk is in the normalized [-1, 1] range unless ``stats`` (a
    ``NormalizationStats``) is given, in which case it is mapped back to env units.
    """
    if sched.K != net.config.diffusion_steps:
        raise ValueError(f"schedule has K={sched.K} but the policy was built for {net.config.diffusion_steps}")

    def eps_fn(x, k):
        return predict_epsilon(net, x, int(k), obs, goal)

    shape = (net.config.horizon, net.config.action_dim)
    if sampler == "ddim":
        actions = ddim_sample(eps_fn, sched, steps, seed, shape)
    elif sampler == "ddpm":
        actions = ddpm_sample(eps_fn, sched, seed, shape)
    else:
        raise ValueError(f"sampler should be 'ddim' or 'ddpm' but is '{sampler}'")
    if stats is not None:
        actions = stats.unnormalize_actions(actions)
    return ActionChunk(actions)
