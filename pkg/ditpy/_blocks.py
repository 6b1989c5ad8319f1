"""Network primitives: attention, MLP, FiLM, timestep embedding and the four
decoder conditioning blocks (adaLN-Zero, adaLN, cross-attention, in-context)."""
import math
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import Tensor, nn

__all__ = [
    "LN_EPS",
    "ModulationParams",
    "sinusoidal_features",
    "TimestepEmbedder",
    "timestep_embedding",
    "film",
    "FiLMGenerator",
    "MultiHeadAttention",
    "Mlp",
    "AdaLNModulation",
    "compute_modulation",
    "modulate",
    "token_mean",
    "causal_mask",
    "block_attention_mask",
    "TransformerBlock",
    "DiTBlock",
    "CrossAttentionBlock",
    "InContextBlock",
    "dit_block",
    "cross_attn_block",
    "in_context_block",
    "init_dense",
]

LN_EPS = 1e-5
INIT_STD = 0.02


def init_dense(linear: nn.Linear, zero: bool = False):
    """Truncated-normal weights and zero bias, or all zeros."""
    if zero:
        nn.init.zeros_(linear.weight)
    else:
        nn.init.trunc_normal_(linear.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
    if linear.bias is not None:
        nn.init.zeros_(linear.bias)


class ModulationParams(NamedTuple):
    shift1: Tensor
    scale1: Tensor
    gate1: Tensor
    shift2: Tensor
    scale2: Tensor
    gate2: Tensor


def sinusoidal_features(k: Tensor, dim: int, max_period: float = 10000.0) -> Tensor:
    """Sine features followed by cosine features over ``max_period ** (-2i / dim)``.

    Args:
        k (Tensor): step indices of shape ``(N,)``.
        dim (int): even feature width.
        max_period (float, optional): controls the lowest frequency. Defaults to 10000.

    Returns:
        Tensor: ``(N, dim)`` features in double precision.
    """
    if dim % 2:
        raise ValueError(f"timestep embedding width should be even but is {dim}")
    half = dim // 2
    i = torch.arange(half, dtype=torch.float64, device=k.device)
    freqs = torch.exp(-math.log(max_period) * 2.0 * i / dim)
    args = k.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class TimestepEmbedder(nn.Module):
    """Sinusoidal Fourier features of the diffusion step passed through a 2-layer MLP."""

    def __init__(self, dim: int, max_period: float = 10000.0):
        super().__init__()
        if dim % 2:
            raise ValueError(f"timestep embedding width should be even but is {dim}")
        self.dim = dim
        self.max_period = max_period
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))
        for m in self.mlp:
            if isinstance(m, nn.Linear):
                init_dense(m)

    def forward(self, k: Tensor) -> Tensor:
        dtype = self.mlp[0].weight.dtype
        return self.mlp(sinusoidal_features(k, self.dim, self.max_period).to(dtype))


def timestep_embedding(k, d: int, params: TimestepEmbedder) -> Tensor:
    if d != params.dim:
        raise ValueError(f"embedder width is {params.dim} but {d} was requested")
    k = torch.as_tensor(k).reshape(-1)
    return params(k)


def film(features: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-channel affine ``h * (1 + gamma) + beta`` on a ``(B, C, H, W)`` or ``(C, H, W)`` map."""
    channel_dim = features.ndim - 3
    n_channels = features.shape[channel_dim]
    if gamma.shape[-1] != n_channels or beta.shape[-1] != n_channels:
        raise ValueError(
            f"FiLM parameters should have {n_channels} channels but have {gamma.shape[-1]} and {beta.shape[-1]}"
        )
    gamma = gamma[..., :, None, None]
    beta = beta[..., :, None, None]
    return features * (1 + gamma) + beta


class FiLMGenerator(nn.Module):
    """Maps a goal embedding to (gamma, beta); zero-initialized so FiLM starts as identity."""

    def __init__(self, cond_dim: int, n_channels: int):
        super().__init__()
        self.proj = nn.Linear(cond_dim, 2 * n_channels)
        init_dense(self.proj, zero=True)

    def forward(self, cond: Tensor):
        return self.proj(cond).chunk(2, dim=-1)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ValueError(f"width {dim} is not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        for m in (self.q, self.k, self.v, self.proj):
            init_dense(m)

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        x: Tensor,
        context: Optional[Tensor] = None,
        key_mask: Optional[Tensor] = None,
        attn_mask: Optional[Tensor] = None,
        return_weights: bool = False,
    ):
        """Attend from ``x`` to ``context`` (``x`` itself when None).

        ``key_mask`` is ``(B, S)`` with True for keys that may be attended to;
        ``attn_mask`` is ``(T, S)`` with the same convention. A query left with no key
        gets zero attention weights.
        """
        context = x if context is None else context
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        allowed = None
        if attn_mask is not None:
            allowed = attn_mask[None, None]
        if key_mask is not None:
            keys = key_mask[:, None, None, :]
            allowed = keys if allowed is None else allowed & keys
        if allowed is None:
            weights = scores.softmax(dim=-1)
        else:
            has_key = allowed.any(dim=-1, keepdim=True)
            # rows without keys are softmaxed over zeros, then dropped
            scores = scores.masked_fill(~allowed, float("-inf")).masked_fill(~has_key, 0.0)
            weights = scores.softmax(dim=-1) * has_key

        out = (weights @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        out = self.proj(out)
        if return_weights:
            return out, weights
        return out


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        init_dense(self.fc1)
        init_dense(self.fc2)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x), approximate="tanh"))


class AdaLNModulation(nn.Module):
    """Single dense layer mapping the conditioning vector to six modulation vectors."""

    def __init__(self, dim: int, zero_gates: bool = True):
        super().__init__()
        self.dim = dim
        self.proj = nn.Linear(dim, 6 * dim)
        init_dense(self.proj)
        if zero_gates:
            with torch.no_grad():
                for gate in (2, 5):
                    self.proj.weight[gate * dim : (gate + 1) * dim].zero_()

    def forward(self, cond: Tensor) -> ModulationParams:
        return ModulationParams(*self.proj(cond).chunk(6, dim=-1))


def compute_modulation(cond: Tensor, params: AdaLNModulation) -> ModulationParams:
    if cond.shape[-1] != params.dim:
        raise ValueError(f"conditioning vector should have width {params.dim} but has {cond.shape[-1]}")
    return params(cond)


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return x * (1 + scale[:, None]) + shift[:, None]


def token_mean(tokens: Tensor, key_mask: Optional[Tensor] = None) -> Tensor:
    if key_mask is None:
        return tokens.mean(dim=1)
    w = key_mask.to(tokens.dtype)[..., None]
    return (tokens * w).sum(dim=1) / w.sum(dim=1).clamp_min(1.0)


def causal_mask(n: int, device=None) -> Tensor:
    return torch.ones(n, n, dtype=torch.bool, device=device).tril()


def block_attention_mask(groups) -> Tensor:
    """Tokens attend only within their own group."""
    groups = torch.as_tensor(groups)
    return groups[:, None] == groups[None, :]


class TransformerBlock(nn.Module):
    """Pre-LN self-attention block; used by the observation encoder."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float = 4.0, causal: bool = False):
        super().__init__()
        self.causal = causal
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.attn = MultiHeadAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x: Tensor, key_mask: Optional[Tensor] = None, attn_mask: Optional[Tensor] = None) -> Tensor:
        if self.causal:
            causal = causal_mask(x.shape[1], device=x.device)
            attn_mask = causal if attn_mask is None else attn_mask & causal
        x = x + self.attn(self.norm1(x), key_mask=key_mask, attn_mask=attn_mask)
        x = x + self.mlp(self.norm2(x))
        return x


class InContextBlock(TransformerBlock):
    """Causal self-attention over ``[memory || x]``."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float = 4.0):
        super().__init__(dim, n_heads, mlp_ratio, causal=True)


class DiTBlock(nn.Module):
    """Self-attention block conditioned through adaptive layer norm.

    With ``zero_init`` the residual gates start at 0, so a fresh block is the identity.
    """

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float = 4.0, zero_init: bool = True):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS, elementwise_affine=False)
        self.attn = MultiHeadAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS, elementwise_affine=False)
        self.mlp = Mlp(dim, mlp_ratio)
        self.modulation = AdaLNModulation(dim, zero_gates=zero_init)

    def forward(self, x: Tensor, cond: Tensor) -> Tensor:
        m = self.modulation(cond)
        x = x + m.gate1[:, None] * self.attn(modulate(self.norm1(x), m.shift1, m.scale1))
        x = x + m.gate2[:, None] * self.mlp(modulate(self.norm2(x), m.shift2, m.scale2))
        return x


class CrossAttentionBlock(nn.Module):
    """Self-attention, cross-attention into ``[time || memory]``, then MLP; ungated residuals."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.self_attn = MultiHeadAttention(dim, n_heads)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.cross_attn = MultiHeadAttention(dim, n_heads)
        self.norm3 = nn.LayerNorm(dim, eps=LN_EPS)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x: Tensor, memory: Tensor, cond_time: Tensor, key_mask: Optional[Tensor] = None) -> Tensor:
        memory = torch.cat([cond_time[:, None], memory], dim=1)
        if key_mask is not None:
            key_mask = torch.cat([torch.ones_like(key_mask[:, :1]), key_mask], dim=1)
        x = x + self.self_attn(self.norm1(x))
        x = x + self.cross_attn(self.norm2(x), context=memory, key_mask=key_mask)
        x = x + self.mlp(self.norm3(x))
        return x


def dit_block(x: Tensor, cond: Tensor, params: DiTBlock) -> Tensor:
    return params(x, cond)


def cross_attn_block(x: Tensor, memory: Tensor, cond_time: Tensor, params: CrossAttentionBlock, key_mask=None) -> Tensor:
    return params(x, memory, cond_time, key_mask=key_mask)


def in_context_block(x_and_memory: Tensor, params: InContextBlock, key_mask=None) -> Tensor:
    return params(x_and_memory, key_mask=key_mask)
