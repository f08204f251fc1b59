"""Tiny torch networks standing in for the denoising UNet, ReferenceNet and pose guider."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tryonvid.attention import FrameSelectionPolicy, select_frame_j
from tryonvid.data import DENOISER_CHANNELS, LATENT_CHANNELS, PROJECTION
from tryonvid.errors import ConfigurationError


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class ConvBlock(nn.Module):
    """Conv-norm-SiLU-conv with a residual; ``emb`` applies a scale/shift after the norm."""

    def __init__(self, cin: int, cout: int, stride: int = 1, emb_dim: int = 0):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.film = nn.Linear(emb_dim, 2 * cout) if emb_dim else None

    def forward(self, x, emb=None):
        h = self.norm(self.conv1(x))
        if self.film is not None and emb is not None:
            scale, shift = self.film(emb).chunk(2, dim=-1)
            h = h * (1 + scale[None, :, None, None]) + shift[None, :, None, None]
        h = F.silu(h)
        return h + self.conv2(h)


class PoseGuider(nn.Module):
    """Two-layer conv encoder of the DensePose frame at latent resolution."""

    def __init__(self, out_ch: int, factor: int = 2, hidden: int = 16):
        super().__init__()
        self.factor = factor
        self.conv1 = nn.Conv2d(3, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, out_ch, 3, padding=1)
        # Start as a no-op so an untrained guider does not perturb the denoiser.
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, pose):
        x = F.avg_pool2d(pose, self.factor)
        return self.conv2(F.silu(self.conv1(x)))


class ToyReferenceEncoder(nn.Module):
    """Garment image -> ``L_c x d`` token block on a fixed grid."""

    def __init__(self, dim: int = 64, grid: tuple[int, int] = (8, 6), image_size: tuple[int, int] = (32, 24)):
        super().__init__()
        self.grid = grid
        self.image_size = image_size
        self.net = nn.Sequential(
            nn.Conv2d(3, dim // 2, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(dim // 2, dim, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(dim, dim, 3, padding=1),
        )
        self.pos = nn.Parameter(torch.zeros(grid[0] * grid[1], dim))

    @property
    def num_tokens(self) -> int:
        return self.grid[0] * self.grid[1]

    def forward(self, garment):
        # garment: (3, H_c, W_c) or (B, 3, H_c, W_c)
        if garment.dim() == 3:
            garment = garment[None]
        x = F.interpolate(garment, size=self.image_size, mode="bilinear", align_corners=False)
        x = F.adaptive_avg_pool2d(self.net(x), self.grid)
        return x.flatten(2).transpose(1, 2)[0] + self.pos


class GarmentAttention(nn.Module):
    """Multi-head spatial attention whose keys/values mix frame and garment tokens.

    ``mode`` is ``"reference"`` (frame + garment), ``"ctc"`` (frame, partner
    frame ``j``, garment), ``"fixed_zero"`` or ``"crossframe"``.
    """

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        if dim % heads:
            raise ConfigurationError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)

    def kv_tokens(self, x, garment, partners: Optional[list[int]], mode: str):
        n = x.shape[0]
        g = garment[None].expand(n, -1, -1)
        if mode == "reference":
            return torch.cat([x, g], dim=1)
        if mode == "crossframe":
            prev = [max(i - 1, 0) for i in range(n)]
            return torch.cat([x[[0] * n], x[prev], g], dim=1)
        return torch.cat([x, x[partners], g], dim=1)

    def forward(self, x, garment, partners=None, mode: str = "ctc"):
        # x: (N, L, d) frame tokens; garment: (L_c, d)
        n, L, d = x.shape
        h = self.norm(x)
        gt = self.norm(garment)
        kv = self.kv_tokens(h, gt, partners, mode)
        dh = d // self.heads

        def split(t):
            return t.reshape(t.shape[0], t.shape[1], self.heads, dh).transpose(1, 2)

        q, k, v = split(self.q(h)), split(self.k(kv)), split(self.v(kv))
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        o = (w @ v).transpose(1, 2).reshape(n, L, d)
        return x + self.out(o), w


class ToyDenoiser(nn.Module):
    """Raw network ``U(c_in x; c_noise, cond)`` for the EDM wrapper.

    Two stride-2 stages down to an ``8 x 6`` token grid (for a 32 x 24
    latent), garment attention at the bottleneck, two stages back up.
    """

    def __init__(self, widths=(32, 48, 64), heads: int = 4, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        c0, c1, c2 = widths
        self.dim = c2
        self.conv_in = nn.Conv2d(DENOISER_CHANNELS, c0, 3, padding=1)
        self.pose = PoseGuider(c0)
        emb = 4 * c0
        self.noise_emb = nn.Sequential(nn.Linear(16, emb), nn.SiLU(), nn.Linear(emb, emb), nn.SiLU())
        self.enc0 = ConvBlock(c0, c0, emb_dim=emb)
        self.down1 = ConvBlock(c0, c1, stride=2, emb_dim=emb)
        self.down2 = ConvBlock(c1, c2, stride=2, emb_dim=emb)
        self.attn = GarmentAttention(c2, heads)
        self.global_cond = nn.Linear(c2, c2)
        self.up1 = ConvBlock(c2 + c1, c1, emb_dim=emb)
        self.up2 = ConvBlock(c1 + c0, c0, emb_dim=emb)
        # The raw input is fed to the head again so copying the unmasked agnostic latent stays cheap.
        self.head_film = nn.Linear(emb, 2 * (c0 + DENOISER_CHANNELS))
        self.conv_out = nn.Conv2d(c0 + DENOISER_CHANNELS, LATENT_CHANNELS, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        self.reference = ToyReferenceEncoder(c2)

    @staticmethod
    def fourier(c_noise: float, n: int = 16) -> torch.Tensor:
        freqs = torch.exp(torch.linspace(0.0, math.log(100.0), n // 2))
        ang = c_noise * freqs
        return torch.cat([torch.sin(ang), torch.cos(ang)])

    def forward(self, x9, c_noise, pose, garment_tokens, partners=None, mode="ctc"):
        """``x9``: (N, 9, h, w); ``pose``: (N, 3, H, W); returns (N, 4, h, w) and attention weights."""
        emb = self.noise_emb(self.fourier(float(c_noise)).to(x9))
        h0 = self.conv_in(x9) + self.pose(pose)
        h0 = self.enc0(h0, emb)
        h1 = self.down1(h0, emb)
        h2 = self.down2(h1, emb)
        n, c, gh, gw = h2.shape
        # Pooled garment tokens act as a global bias (stand-in for image-embedding conditioning).
        h2 = h2 + self.global_cond(garment_tokens.mean(0))[None, :, None, None]
        tokens = h2.flatten(2).transpose(1, 2)
        tokens, weights = self.attn(tokens, garment_tokens, partners, mode)
        h2 = tokens.transpose(1, 2).reshape(n, c, gh, gw)
        u = F.interpolate(h2, size=h1.shape[-2:], mode="nearest")
        u = self.up1(torch.cat([u, h1], dim=1), emb)
        u = F.interpolate(u, size=h0.shape[-2:], mode="nearest")
        u = self.up2(torch.cat([u, h0], dim=1), emb)
        scale, shift = self.head_film(emb).chunk(2, dim=-1)
        u = torch.cat([u, x9], dim=1) * (1 + scale[None, :, None, None]) + shift[None, :, None, None]
        return self.conv_out(u), weights


def partners_for(policy: Optional[FrameSelectionPolicy], n: int, rng: Optional[np.random.Generator] = None):
    """Attention mode string and per-frame partner indices for a policy (``None`` turns cross-frame attention off)."""
    if policy is None:
        return "reference", None
    if policy.mode == "crossframe_baseline":
        return "crossframe", None
    mode = "fixed_zero" if policy.mode == "fixed_zero" else "ctc"
    return mode, [select_frame_j(policy, i, n, rng) for i in range(n)]


def projection_tensor() -> torch.Tensor:
    return torch.as_tensor(np.array(PROJECTION), dtype=torch.float32)
