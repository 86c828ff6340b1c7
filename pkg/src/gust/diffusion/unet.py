"""Conditional U-Net noise predictor.

The nominal geometry conditions the network twice: it is concatenated with
the noisy sample at the input convolution, and every normalization layer is
spatially adaptive (SPADE), with per-pixel scale and shift computed from the
nominal resampled to that layer's resolution.  Timesteps enter through a
sinusoidal embedding that each block turns into a per-channel scale/shift.

Parameter names are structured so freezing can select them:
``enc.{l}.*`` / ``dec.{l}.*`` for the symmetric block pair at level ``l + 1``
(level 1 is the full-resolution pair), ``*.attn.*`` for self-attention,
``*norm*`` inside blocks for SPADE layers and ``mid.*`` for the bottleneck MLP.
"""

import hashlib
import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DenoiserConfig:
    """Architecture of the conditional U-Net.

    ``channel_mults`` has one entry per level; ``attention_levels`` lists the
    1-based levels (1 = finest) that carry a self-attention layer.
    """

    levels: int = 3
    base_channels: int = 32
    channel_mults: tuple = (1, 2, 2)
    attention_levels: tuple = (3,)
    time_embed_dim: int = 64
    spade_hidden: int = 32
    bottleneck_ratio: float = 0.5
    max_groups: int = 8
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        object.__setattr__(self, "channel_mults", tuple(int(m) for m in self.channel_mults))
        object.__setattr__(self, "attention_levels", tuple(int(a) for a in self.attention_levels))
        if len(self.channel_mults) != self.levels:
            raise ValueError("channel_mults needs one entry per level")
        if any(not 1 <= a <= self.levels for a in self.attention_levels):
            raise ValueError("attention_levels must be within 1..levels")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")

    @property
    def channels(self):
        return [self.base_channels * m for m in self.channel_mults]

    def check_resolution(self, shape):
        step = 2 ** (self.levels - 1)
        if shape[0] % step or shape[1] % step:
            raise ValueError(f"resolution {tuple(shape)} is not divisible by {step} "
                             f"({self.levels} levels)")

    def to_dict(self):
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        d["attention_levels"] = list(self.attention_levels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def full(cls):
        """Five-level layout with attention at every level."""
        return cls(levels=5, base_channels=64, channel_mults=(1, 2, 2, 4, 4),
                   attention_levels=(1, 2, 3, 4, 5), time_embed_dim=128, spade_hidden=64)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _groups(channels, max_groups):
    g = min(max_groups, channels)
    while channels % g:
        g -= 1
    return g


def timestep_embedding(t, dim):
    """Sinusoidal embedding of integer timesteps, shape ``(B, dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    return emb.to(torch.get_default_dtype())


class SPADE(nn.Module):
    """Parameter-free group norm modulated by maps computed from the condition."""

    def __init__(self, channels, hidden, max_groups):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels, max_groups), channels, affine=False)
        self.shared = nn.Conv2d(1, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)
        self.cached = None

    def modulation(self, cond, size):
        if cond.shape[-2:] != size:
            cond = F.interpolate(cond, size=size, mode="area")
        h = F.silu(self.shared(cond))
        return self.gamma(h), self.beta(h)

    def forward(self, x, cond):
        if self.cached is not None:
            gamma, beta = self.cached
        else:
            gamma, beta = self.modulation(cond, x.shape[-2:])
        return self.norm(x) * (1 + gamma) + beta


class DenoisingBlock(nn.Module):
    def __init__(self, c_in, c_out, temb_dim, hidden, max_groups):
        super().__init__()
        self.norm1 = SPADE(c_in, hidden, max_groups)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time = nn.Linear(temb_dim, 2 * c_out)
        self.norm2 = SPADE(c_out, hidden, max_groups)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb, cond):
        h = self.conv1(F.silu(self.norm1(x, cond)))
        scale, shift = self.time(temb)[:, :, None, None].chunk(2, dim=1)
        h = h * (1 + scale) + shift
        h = self.conv2(F.silu(self.norm2(h, cond)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    def __init__(self, channels, max_groups):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels, max_groups), channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(c), dim=-1)
        out = torch.einsum("bij,bcj->bci", attn, v).reshape(b, c, h, w)
        return x + self.proj(out)


class EncoderLevel(nn.Module):
    def __init__(self, c_in, c_out, cfg, attention, downsample):
        super().__init__()
        self.block = DenoisingBlock(c_in, c_out, cfg.time_embed_dim, cfg.spade_hidden,
                                    cfg.max_groups)
        self.attn = SelfAttention(c_out, cfg.max_groups) if attention else None
        self.down = nn.Conv2d(c_out, c_out, 3, stride=2, padding=1) if downsample else None

    def forward(self, x, temb, cond):
        h = self.block(x, temb, cond)
        if self.attn is not None:
            h = self.attn(h)
        return h, (self.down(h) if self.down is not None else h)


class DecoderLevel(nn.Module):
    def __init__(self, c_in, c_skip, c_out, cfg, attention, upsample):
        super().__init__()
        self.block = DenoisingBlock(c_in + c_skip, c_out, cfg.time_embed_dim, cfg.spade_hidden,
                                    cfg.max_groups)
        self.attn = SelfAttention(c_out, cfg.max_groups) if attention else None
        self.up = nn.Conv2d(c_out, c_out, 3, padding=1) if upsample else None

    def forward(self, x, skip, temb, cond):
        h = self.block(torch.cat([x, skip], dim=1), temb, cond)
        if self.attn is not None:
            h = self.attn(h)
        if self.up is not None:
            h = self.up(F.interpolate(h, scale_factor=2, mode="nearest"))
        return h


class BottleneckMLP(nn.Module):
    """Per-pixel MLP that squeezes the channel dimension and expands it back."""

    def __init__(self, channels, ratio):
        super().__init__()
        hidden = max(1, int(round(channels * ratio)))
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        return x + self.fc2(F.silu(self.fc1(x)))


class ConditionalUNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.channels
        d = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.inp = nn.Conv2d(2, chans[0], 3, padding=1)
        attn = set(cfg.attention_levels)
        self.enc = nn.ModuleList()
        c_prev = chans[0]
        for lvl, c in enumerate(chans, start=1):
            self.enc.append(EncoderLevel(c_prev, c, cfg, lvl in attn, lvl < cfg.levels))
            c_prev = c
        self.mid = BottleneckMLP(chans[-1], cfg.bottleneck_ratio)
        # dec[l] mirrors enc[l]; it runs deepest first and upsamples into level l
        self.dec = nn.ModuleList()
        for lvl, c in enumerate(chans, start=1):
            # input arrives with the channel count of this level
            c_out = chans[lvl - 2] if lvl > 1 else chans[0]
            self.dec.append(DecoderLevel(c, c, c_out, cfg, lvl in attn, lvl > 1))
        self.out_norm = nn.GroupNorm(_groups(chans[0], cfg.max_groups), chans[0])
        self.out = nn.Conv2d(chans[0], 1, 3, padding=1)

    @contextmanager
    def fixed_condition(self, cond, shape):
        """Precompute SPADE modulation maps for a condition reused across calls.

        ``cond`` may have batch size 1 and broadcast against any batch.  Within
        the context the ``cond`` passed to :meth:`forward` is only used for
        input concatenation.
        """
        h, w = shape
        spades = []
        for lvl, pair in enumerate(zip(self.enc, self.dec)):
            for mod in pair:
                for sub in mod.modules():
                    if isinstance(sub, SPADE):
                        sub.cached = sub.modulation(cond, (h >> lvl, w >> lvl))
                        spades.append(sub)
        try:
            yield self
        finally:
            for sub in spades:
                sub.cached = None

    def forward(self, x_t, t, cond):
        """Predict the noise in ``x_t``; all image tensors are ``(B, 1, H, W)``."""
        temb = self.time_mlp(timestep_embedding(t, self.cfg.time_embed_dim).to(x_t.dtype))
        h = self.inp(torch.cat([x_t, cond], dim=1))
        skips = []
        for level in self.enc:
            s, h = level(h, temb, cond)
            skips.append(s)
        h = self.mid(h)
        for level, s in zip(reversed(self.dec), reversed(skips)):
            h = level(h, s, temb, cond)
        return self.out(F.silu(self.out_norm(h)))
