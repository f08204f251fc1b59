"""Video, mask and pose containers plus the denoiser input assembly.

Frames are stored channels-last (``N x H x W x C``) as float64 in ``[0, 1]``.
Every operation accepts either the container types below or bare arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from tryonvid.errors import DimensionError

DENSEPOSE_BACKGROUND = (65 / 255.0, 0.0, 82 / 255.0)
DEFAULT_FILL = 0.5
LATENT_CHANNELS = 4
DENOISER_CHANNELS = 2 * LATENT_CHANNELS + 1
GARMENT_CATEGORIES = ("upper", "lower", "dress")


def _as_frames(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def _as_mask(x) -> np.ndarray:
    m = np.asarray(getattr(x, "masks", x), dtype=np.float64)
    # 3-channel masks are accepted and collapsed; the channels must agree.
    if m.ndim == 4:
        if m.shape[-1] == 1:
            m = m[..., 0]
        elif m.shape[-1] == 3:
            if not (np.array_equal(m[..., 0], m[..., 1]) and np.array_equal(m[..., 0], m[..., 2])):
                raise DimensionError("3-channel mask has disagreeing channels")
            m = m[..., 0]
        else:
            raise DimensionError(f"mask must be N x H x W, got shape {m.shape}")
    if m.ndim != 3:
        raise DimensionError(f"mask must be N x H x W, got shape {m.shape}")
    return m


def _as_latents(x) -> np.ndarray:
    return np.asarray(getattr(x, "latents", x), dtype=np.float64)


def _check_frames(frames: np.ndarray, name: str) -> None:
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DimensionError(f"{name} must be N x H x W x 3, got shape {frames.shape}")
    if frames.shape[0] < 1:
        raise DimensionError(f"{name} must contain at least one frame")


@dataclass(frozen=True)
class VideoClip:
    frames: np.ndarray
    frame_rate: float = 8.0

    def __post_init__(self):
        frames = _as_frames(self.frames)
        _check_frames(frames, "video")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValueError("video values must lie in [0, 1]")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class AgnosticMask:
    """Binary garment-removal mask; 1 marks pixels to erase."""

    masks: np.ndarray

    def __post_init__(self):
        m = _as_mask(self.masks)
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("agnostic mask values must be 0 or 1")
        if m.sum() == 0:
            raise ValueError("agnostic mask must mark at least one pixel in some frame")
        object.__setattr__(self, "masks", m)


@dataclass(frozen=True)
class AgnosticVideo:
    frames: np.ndarray
    fill_value: float = DEFAULT_FILL

    def __post_init__(self):
        frames = _as_frames(self.frames)
        _check_frames(frames, "agnostic video")
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class DensePoseClip:
    frames: np.ndarray
    background_color: tuple[float, float, float] = DENSEPOSE_BACKGROUND

    def __post_init__(self):
        frames = _as_frames(self.frames)
        _check_frames(frames, "densepose clip")
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class GarmentImage:
    image: np.ndarray
    category: str = "upper"

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[-1] != 3 or img.size == 0:
            raise DimensionError(f"garment must be a nonempty H x W x 3 image, got {img.shape}")
        if self.category not in GARMENT_CATEGORIES:
            raise ValueError(f"unknown garment category {self.category!r}")
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class LatentClip:
    latents: np.ndarray
    downsample_factor: int = 2

    def __post_init__(self):
        z = _as_latents(self.latents)
        if z.ndim != 4 or z.shape[-1] != LATENT_CHANNELS:
            raise DimensionError(f"latents must be N x h x w x 4, got {z.shape}")
        object.__setattr__(self, "latents", z)


@dataclass(frozen=True)
class DenoiserInput:
    channels: np.ndarray
    pose_embedding: np.ndarray

    @property
    def noisy(self) -> np.ndarray:
        return self.channels[..., 0:4]

    @property
    def agnostic(self) -> np.ndarray:
        return self.channels[..., 4:8]

    @property
    def mask(self) -> np.ndarray:
        return self.channels[..., 8]


@dataclass(frozen=True)
class AgnosticBundle:
    """Per-frame aligned agnostic video, mask and DensePose clip."""

    agnostic: AgnosticVideo
    mask: AgnosticMask
    densepose: DensePoseClip
    frame_rate: float = 8.0

    def __post_init__(self):
        n, h, w = self.mask.masks.shape
        for name, arr in (("agnostic", self.agnostic.frames), ("densepose", self.densepose.frames)):
            if arr.shape[:3] != (n, h, w):
                raise DimensionError(f"{name} shape {arr.shape[:3]} != mask shape {(n, h, w)}")

    @property
    def num_frames(self) -> int:
        return self.mask.masks.shape[0]

    def slice(self, indices) -> "AgnosticBundle":
        idx = np.asarray(indices, dtype=np.intp)
        return AgnosticBundle(
            AgnosticVideo(self.agnostic.frames[idx], self.agnostic.fill_value),
            _RawMask(self.mask.masks[idx]),
            DensePoseClip(self.densepose.frames[idx], self.densepose.background_color),
            self.frame_rate,
        )


class _RawMask(AgnosticMask):
    # Subsets of a valid clip may legitimately contain no masked pixel.
    def __post_init__(self):
        object.__setattr__(self, "masks", _as_mask(self.masks))


def compose_agnostic(video, mask, fill_value: float = DEFAULT_FILL) -> AgnosticVideo:
    """Erase the masked region of ``video`` by painting it with ``fill_value``."""
    frames = _as_frames(video)
    m = _as_mask(mask)
    if frames.ndim != 4 or frames.shape[:3] != m.shape:
        raise DimensionError(f"video shape {frames.shape} does not match mask shape {m.shape}")
    if not 0.0 <= fill_value <= 1.0:
        raise ValueError("fill_value must lie in [0, 1]")
    out = np.where(m[..., None] > 0, fill_value, frames)
    return AgnosticVideo(out, fill_value)


# Toy latent codec: 2x2 space-to-depth (12 channels) followed by a fixed
# orthonormal 12 -> 4 projection. Rows 0-2 are per-colour block means, row 3 is
# a horizontal Haar detail of luma.
_LUMA = np.array([0.299, 0.587, 0.114])


def _projection() -> np.ndarray:
    proj = np.zeros((LATENT_CHANNELS, 2, 2, 3))
    for c in range(3):
        proj[c, :, :, c] = 0.5
    detail = np.array([1.0, -1.0])[None, :, None] * _LUMA[None, None, :]
    proj[3] = np.broadcast_to(detail, (2, 2, 3))
    proj[3] /= np.linalg.norm(proj[3])
    return proj.reshape(LATENT_CHANNELS, 12)


PROJECTION = _projection()
PROJECTION.setflags(write=False)


def space_to_depth(frames: np.ndarray, factor: int) -> np.ndarray:
    n, h, w, c = frames.shape
    if h % factor or w % factor:
        raise DimensionError(f"frame size {h}x{w} not divisible by {factor}")
    x = frames.reshape(n, h // factor, factor, w // factor, factor, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(n, h // factor, w // factor, factor * factor * c)


def depth_to_space(x: np.ndarray, factor: int) -> np.ndarray:
    n, h, w, cc = x.shape
    c = cc // (factor * factor)
    y = x.reshape(n, h, w, factor, factor, c).transpose(0, 1, 3, 2, 4, 5)
    return y.reshape(n, h * factor, w * factor, c)


def encode_latent(video, downsample_factor: int = 2) -> LatentClip:
    if downsample_factor != 2:
        raise ValueError("the toy codec is defined for downsample_factor=2 only")
    frames = _as_frames(video)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DimensionError(f"video must be N x H x W x 3, got {frames.shape}")
    blocks = space_to_depth(frames, downsample_factor)
    return LatentClip(blocks @ PROJECTION.T, downsample_factor)


def decode_frames(latent) -> np.ndarray:
    """Transposed projection + depth-to-space, without clipping."""
    z = _as_latents(latent)
    factor = getattr(latent, "downsample_factor", 2)
    return depth_to_space(z @ PROJECTION, factor)


def decode_latent(latent) -> VideoClip:
    return VideoClip(np.clip(decode_frames(latent), 0.0, 1.0))


class ToyCodec:
    """Pixel <-> latent stream adapter for long-video orchestration."""

    factor = 2

    def encode(self, frames: np.ndarray) -> np.ndarray:
        return encode_latent(frames, self.factor).latents

    def decode(self, stream: np.ndarray) -> np.ndarray:
        return decode_frames(stream)


def area_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor x factor`` blocks over axes 1 and 2."""
    n, h, w = x.shape[:3]
    if h % factor or w % factor:
        raise DimensionError(f"size {h}x{w} not divisible by {factor}")
    rest = x.shape[3:]
    y = x.reshape(n, h // factor, factor, w // factor, factor, *rest)
    return y.mean(axis=(2, 4))


def resize_mask_to_latent(mask, factor: int = 2) -> np.ndarray:
    return area_downsample(_as_mask(mask), factor)


def densepose_at_latent(pose, factor: int = 2) -> np.ndarray:
    return area_downsample(_as_frames(pose), factor)


def assemble_denoiser_input(
    noisy,
    agnostic,
    mask_resized,
    pose,
    pose_encoder: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> DenoiserInput:
    """Stack ``[noisy(4) | agnostic latent(4) | resized mask(1)]`` per frame.

    The DensePose clip goes through ``pose_encoder`` separately; without one,
    it is area-downsampled to latent resolution (3 embedding channels).
    """
    zn = _as_latents(noisy)
    za = _as_latents(agnostic)
    m = np.asarray(mask_resized, dtype=np.float64)
    if zn.shape != za.shape:
        raise DimensionError(f"noisy {zn.shape} and agnostic {za.shape} latents differ")
    if zn.ndim != 4 or zn.shape[-1] != LATENT_CHANNELS:
        raise DimensionError(f"latents must be N x h x w x 4, got {zn.shape}")
    if m.shape != zn.shape[:3]:
        raise DimensionError(f"resized mask {m.shape} does not match latents {zn.shape[:3]}")
    pose_frames = _as_frames(pose)
    if pose_frames.shape[0] != zn.shape[0]:
        raise DimensionError("pose clip and latents have different frame counts")
    if pose_encoder is None:
        h = zn.shape[1]
        if pose_frames.shape[1] % h:
            raise DimensionError("pose resolution is not a multiple of the latent resolution")
        emb = densepose_at_latent(pose_frames, pose_frames.shape[1] // h)
    else:
        emb = np.asarray(pose_encoder(pose_frames), dtype=np.float64)
    if emb.shape[:3] != zn.shape[:3]:
        raise DimensionError(f"pose embedding {emb.shape} not at latent resolution {zn.shape[:3]}")
    channels = np.concatenate([zn, za, m[..., None]], axis=-1)
    return DenoiserInput(channels, emb)


@dataclass
class ClipSample:
    """A synthetic training example: target video plus its conditioning."""

    target: VideoClip
    bundle: AgnosticBundle
    garment: GarmentImage
    meta: dict = field(default_factory=dict)


VideoLike = Union[VideoClip, AgnosticVideo, np.ndarray]
