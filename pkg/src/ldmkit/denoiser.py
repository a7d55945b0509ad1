"""Latent-space noise predictor: a small U-Net with cross-attention conditioning.

The network predicts the noise component of a noised latent given the timestep
and a conditioning context (text hidden states or a single class-embedding
token). An empty or fully masked context contributes nothing, which is what
makes the classifier-free null condition exact.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

_MASK_BIAS = -1e9


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features for integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _groups(channels: int) -> int:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


class _ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, x, t_emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(t_emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class _Attention(nn.Module):
    """Multi-head attention; serves self-attention (context=None) and
    cross-attention over a padded context with a boolean key mask."""

    def __init__(self, dim: int, context_dim: int | None, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        ctx = context_dim if context_dim is not None else dim
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(ctx, dim)
        self.to_v = nn.Linear(ctx, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, context=None, mask=None):
        b, n, d = x.shape
        ctx = x if context is None else context
        if ctx.shape[1] == 0:
            return torch.zeros_like(x)
        h = self.n_heads
        q = self.to_q(x).reshape(b, n, h, d // h).transpose(1, 2)
        k = self.to_k(ctx).reshape(b, ctx.shape[1], h, d // h).transpose(1, 2)
        v = self.to_v(ctx).reshape(b, ctx.shape[1], h, d // h).transpose(1, 2)
        logits = q @ k.transpose(-2, -1) / math.sqrt(d // h)
        if mask is not None:
            logits = logits + torch.where(mask, 0.0, _MASK_BIAS)[:, None, None, :].to(logits.dtype)
        out = logits.softmax(dim=-1) @ v
        if mask is not None:
            # samples whose context is fully masked receive no conditioning
            out = out * mask.any(dim=-1).to(out.dtype)[:, None, None, None]
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class _AttentionBlock(nn.Module):
    """Self-attention over spatial positions, then cross-attention to the context."""

    def __init__(self, channels: int, context_dim: int, n_heads: int):
        super().__init__()
        self.norm_self = nn.LayerNorm(channels)
        self.self_attn = _Attention(channels, None, n_heads)
        self.norm_cross = nn.LayerNorm(channels)
        self.cross_attn = _Attention(channels, context_dim, n_heads)
        self.norm_mlp = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(nn.Linear(channels, 2 * channels), nn.GELU(),
                                 nn.Linear(2 * channels, channels))

    def forward(self, x, context, mask):
        b, c, hh, ww = x.shape
        seq = x.reshape(b, c, hh * ww).transpose(1, 2)
        seq = seq + self.self_attn(self.norm_self(seq))
        seq = seq + self.cross_attn(self.norm_cross(seq), context, mask)
        seq = seq + self.mlp(self.norm_mlp(seq))
        return seq.transpose(1, 2).reshape(b, c, hh, ww)


class CondUNet(nn.Module):
    """Epsilon-predicting U-Net over latents with conditioning cross-attention.

    depth is the number of resolution levels (stage i runs at 1/2^i of the
    latent side); attention_stages lists the levels that get self+cross
    attention, by default only the lowest resolution.
    """

    def __init__(self, latent_channels=3, base_width=64, depth=3,
                 attention_stages=None, context_dim=128, time_embed_dim=128, n_heads=4):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        stages = tuple(range(depth))
        self.attention_stages = tuple(sorted(attention_stages)) if attention_stages is not None \
            else (depth - 1,)
        if not set(self.attention_stages) <= set(stages):
            raise ValueError(f"attention_stages {self.attention_stages} outside stages {stages}")
        self.latent_channels = latent_channels
        self.context_dim = context_dim
        self.time_embed_dim = time_embed_dim
        widths = [base_width * min(2**i, 4) for i in range(depth)]

        self.time_mlp = nn.Sequential(nn.Linear(time_embed_dim, time_embed_dim), nn.SiLU(),
                                      nn.Linear(time_embed_dim, time_embed_dim))
        self.stem = nn.Conv2d(latent_channels, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsamplers = nn.ModuleList()
        for i in range(depth):
            cin = widths[max(i - 1, 0)] if i else widths[0]
            self.down_blocks.append(_ResBlock(cin, widths[i], time_embed_dim))
            self.down_attn.append(
                _AttentionBlock(widths[i], context_dim, n_heads)
                if i in self.attention_stages else None
            )
            self.downsamplers.append(
                nn.Conv2d(widths[i], widths[i], 3, stride=2, padding=1) if i < depth - 1 else None
            )

        self.mid_block1 = _ResBlock(widths[-1], widths[-1], time_embed_dim)
        self.mid_attn = _AttentionBlock(widths[-1], context_dim, n_heads)
        self.mid_block2 = _ResBlock(widths[-1], widths[-1], time_embed_dim)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsamplers = nn.ModuleList()
        for i in reversed(range(depth)):
            cout = widths[max(i - 1, 0)] if i else widths[0]
            self.up_blocks.append(_ResBlock(widths[i] * 2, cout, time_embed_dim))
            self.up_attn.append(
                _AttentionBlock(cout, context_dim, n_heads)
                if i in self.attention_stages else None
            )
            self.upsamplers.append(nn.Upsample(scale_factor=2, mode="nearest") if i else None)

        self.out_norm = nn.GroupNorm(_groups(widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], latent_channels, 3, padding=1)

    def forward(self, z_t, t, context=None, context_mask=None):
        """Predict eps for noised latents z_t (B, c, h, w) at timestep(s) t.

        context is (B, L, context_dim) with optional boolean key mask (B, L);
        None or zero-length context means unconditional.
        """
        if z_t.shape[1] != self.latent_channels:
            raise ValueError(
                f"latent has {z_t.shape[1]} channels, model expects {self.latent_channels}"
            )
        if context is not None and context.shape[-1] != self.context_dim:
            raise ValueError(
                f"context dim {context.shape[-1]} does not match model {self.context_dim}"
            )
        if not torch.is_tensor(t):
            t = torch.full((z_t.shape[0],), int(t), dtype=torch.long)
        t_emb = self.time_mlp(timestep_embedding(t, self.time_embed_dim).to(z_t.dtype))

        h = self.stem(z_t)
        skips = []
        for block, attn, down in zip(self.down_blocks, self.down_attn, self.downsamplers):
            h = block(h, t_emb)
            if attn is not None:
                h = attn(h, context, context_mask)
            skips.append(h)
            if down is not None:
                h = down(h)

        h = self.mid_block1(h, t_emb)
        h = self.mid_attn(h, context, context_mask)
        h = self.mid_block2(h, t_emb)

        for block, attn, up in zip(self.up_blocks, self.up_attn, self.upsamplers):
            h = block(torch.cat([h, skips.pop()], dim=1), t_emb)
            if attn is not None:
                h = attn(h, context, context_mask)
            if up is not None:
                h = up(h)

        return self.out_conv(F.silu(self.out_norm(h)))


def load_init(net: CondUNet, init: str, seed: int = 0) -> dict:
    """Initialise a denoiser from scratch (seeded) or from a checkpoint file.

    Returns a provenance record for the run metadata.
    """
    if init == "scratch":
        torch.manual_seed(seed)
        for module in net.modules():
            if hasattr(module, "reset_parameters"):
                module.reset_parameters()
        return {"init": "scratch", "seed": seed}
    payload = torch.load(init, weights_only=False)
    state = payload["denoiser"] if isinstance(payload, dict) and "denoiser" in payload else payload
    own = net.state_dict()
    for name, tensor in state.items():
        if name not in own or own[name].shape != tensor.shape:
            raise ValueError(f"checkpoint incompatible with model at parameter {name!r}")
    net.load_state_dict(state)
    return {"init": str(init)}


def count_parameters(net: nn.Module) -> int:
    return int(sum(int(np.prod(p.shape)) for p in net.parameters()))
