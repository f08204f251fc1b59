"""Procedural try-on clips: a moving torso wearing a textured garment patch."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from tryonvid.data import (
    DENSEPOSE_BACKGROUND,
    DEFAULT_FILL,
    AgnosticBundle,
    AgnosticMask,
    ClipSample,
    DensePoseClip,
    GarmentImage,
    VideoClip,
    compose_agnostic,
)

TORSO_POSE_COLOR = (0.15, 0.65, 0.85)
HEAD_POSE_COLOR = (0.95, 0.8, 0.2)
SKIN = (0.87, 0.68, 0.55)


@dataclass(frozen=True)
class MotionSpec:
    """Torso trajectory: top-left corner ``start + t * velocity`` (pixels, rounded)."""

    velocity: tuple[float, float] = (0.0, 2.0)
    start: Optional[tuple[int, int]] = None
    torso: tuple[int, int] = (24, 16)
    bob: float = 0.0

    def position(self, t: int, H: int, W: int) -> tuple[int, int]:
        th, tw = self.torso
        y0, x0 = self.start if self.start is not None else ((H - th) // 2 + 4, 4)
        y = y0 + self.velocity[0] * t + self.bob * np.sin(2 * np.pi * t / 8)
        x = x0 + self.velocity[1] * t
        return (int(np.clip(round(y), 0, H - th)), int(np.clip(round(x), 0, W - tw)))


def _texture(rng: np.random.Generator, h: int, w: int, kind: str) -> np.ndarray:
    c1, c2 = rng.uniform(0.15, 0.9, size=(2, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    period = int(rng.integers(6, 10))
    if kind == "stripes":
        t = 0.5 + 0.5 * np.cos(2 * np.pi * yy / period)
    else:
        t = ((yy // period + xx // period) % 2).astype(float)
        t = 0.25 + 0.5 * t
    return c1 * t[..., None] + c2 * (1 - t[..., None])


def _background(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    top, bottom = rng.uniform(0.3, 0.95, size=(2, 3))
    a = np.linspace(0.0, 1.0, H)[:, None, None]
    bg = top * (1 - a) + bottom * a
    return np.broadcast_to(bg, (H, W, 3)).copy()


def generate_synthetic_clip(
    seed: int = 0,
    N: int = 8,
    H: int = 64,
    W: int = 48,
    motion: Optional[MotionSpec] = None,
    fill_value: float = DEFAULT_FILL,
    frame_rate: float = 8.0,
) -> tuple[VideoClip, AgnosticBundle, GarmentImage]:
    """Return ``(target video, agnostic bundle, new garment)`` for a scripted clip."""
    motion = motion or MotionSpec()
    rng = np.random.default_rng(seed)
    th, tw = motion.torso
    old = _texture(rng, th, tw, "stripes")
    new = _texture(rng, th, tw, "checker")
    bg = _background(rng, H, W)
    hs = max(2, tw // 2)

    source = np.empty((N, H, W, 3))
    target = np.empty((N, H, W, 3))
    masks = np.zeros((N, H, W))
    pose = np.empty((N, H, W, 3))
    for t in range(N):
        y, x = motion.position(t, H, W)
        frame = bg.copy()
        head_y = max(0, y - hs)
        hx = x + (tw - hs) // 2
        frame[head_y:y, hx : hx + hs] = SKIN
        src, tgt = frame.copy(), frame
        src[y : y + th, x : x + tw] = old
        tgt[y : y + th, x : x + tw] = new
        source[t], target[t] = src, tgt
        masks[t, y : y + th, x : x + tw] = 1.0
        p = np.empty((H, W, 3))
        p[:] = DENSEPOSE_BACKGROUND
        p[head_y:y, hx : hx + hs] = HEAD_POSE_COLOR
        p[y : y + th, x : x + tw] = TORSO_POSE_COLOR
        pose[t] = p

    mask = AgnosticMask(masks)
    agnostic = compose_agnostic(source, mask, fill_value)
    bundle = AgnosticBundle(agnostic, mask, DensePoseClip(pose), frame_rate)
    return VideoClip(target, frame_rate), bundle, GarmentImage(new, "upper")


def synthetic_sample(seed: int = 0, **kw) -> ClipSample:
    target, bundle, garment = generate_synthetic_clip(seed, **kw)
    return ClipSample(target, bundle, garment, {"seed": seed, **{k: v for k, v in kw.items() if k != "motion"}})
