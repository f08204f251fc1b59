"""Frame and clip quality metrics.

Only SSIM is implemented here; perceptual metrics (LPIPS, FID, KID, VFID)
plug in through :func:`register_metric`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.signal import convolve2d

from tryonvid.data import _as_frames
from tryonvid.errors import DimensionError

K1, K2 = 0.01, 0.03
GAUSS_SIGMA = 1.5
LUMA = np.array([0.299, 0.587, 0.114])


def gaussian_window(size: int = 11, sigma: float = GAUSS_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def to_gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3 and frame.shape[-1] == 3:
        return frame @ LUMA
    if frame.ndim == 3 and frame.shape[-1] == 1:
        return frame[..., 0]
    if frame.ndim == 2:
        return frame
    raise DimensionError(f"expected an H x W or H x W x 3 frame, got {frame.shape}")


def ssim(a, b, window: int = 11, k1: float = K1, k2: float = K2, data_range: float = 1.0) -> float:
    """Mean Gaussian-windowed SSIM on the luma channel (valid region only).

    Frames smaller than ``window`` use the largest odd window that fits.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"frames differ in shape: {a.shape} vs {b.shape}")
    x, y = to_gray(a), to_gray(b)
    size = min(window, *x.shape)
    size -= 1 - size % 2
    w = gaussian_window(size)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(z):
        return convolve2d(z, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def clip_ssim(a, b, **kw) -> float:
    fa, fb = _as_frames(a), _as_frames(b)
    if fa.shape[0] != fb.shape[0]:
        raise DimensionError(f"frame counts differ: {fa.shape[0]} vs {fb.shape[0]}")
    return float(np.mean([ssim(x, y, **kw) for x, y in zip(fa, fb)]))


def flicker_score(gen, ref) -> float:
    """Mean over t of MSE between the generated and reference temporal differences."""
    g, r = _as_frames(gen), _as_frames(ref)
    if g.shape != r.shape:
        raise DimensionError(f"clips differ in shape: {g.shape} vs {r.shape}")
    if g.shape[0] < 2:
        raise ValueError("flicker needs at least two frames")
    dg = np.diff(g, axis=0)
    dr = np.diff(r, axis=0)
    return float(np.mean((dg - dr) ** 2))


@dataclass
class MetricReport:
    per_clip: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregate: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, clip: str, values: dict[str, float]) -> None:
        self.per_clip[clip] = dict(values)
        keys = {k for v in self.per_clip.values() for k in v}
        self.aggregate = {
            k: float(np.mean([v[k] for v in self.per_clip.values() if k in v])) for k in sorted(keys)
        }

    def to_dict(self) -> dict:
        return {"per_clip": self.per_clip, "aggregate": self.aggregate, "metadata": self.metadata}


class Unavailable:
    """Returned for metrics that have no implementation registered."""

    def __init__(self, name: str):
        self.name = name

    def __bool__(self) -> bool:
        return False

    def __call__(self, *args, **kwargs):
        raise RuntimeError(f"metric {self.name!r} is not available; register an implementation first")

    def __repr__(self) -> str:
        return f"Unavailable({self.name!r})"


# Callables take (generated clip, reference clip) and return a float.
_REGISTRY: dict[str, Callable] = {
    "ssim": clip_ssim,
    "flicker": flicker_score,
}


def register_metric(name: str, fn: Callable) -> None:
    _REGISTRY[name.lower()] = fn


def unregister_metric(name: str) -> None:
    _REGISTRY.pop(name.lower(), None)


def perceptual_metric_interface(name: str) -> Callable | Unavailable:
    return _REGISTRY.get(name.lower(), Unavailable(name))


def available_metrics() -> list[str]:
    return sorted(_REGISTRY)


def evaluate_clips(gen, ref, metrics: Optional[list[str]] = None) -> dict[str, float]:
    out = {}
    for name in metrics or ["ssim", "flicker"]:
        fn = perceptual_metric_interface(name)
        if fn:
            out[name] = float(fn(gen, ref))
    return out
