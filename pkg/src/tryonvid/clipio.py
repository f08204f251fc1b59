"""On-disk formats: clip directories, plan files and metrics logs.

A clip directory holds zero-padded 8-bit PNG sequences plus a manifest::

    clip/
      manifest.json      N, H, W, frame_rate, fill_value, background_color, has_target
      agnostic/0000.png
      mask/0000.png      single channel, 0 or 255
      densepose/0000.png
      target/0000.png    optional ground truth
      garment.png

Values are quantised to 8 bits on write, so a round trip is exact for
clips whose values are multiples of 1/255.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from PIL import Image

from tryonvid.data import (
    AgnosticBundle,
    AgnosticMask,
    AgnosticVideo,
    DensePoseClip,
    GarmentImage,
    VideoClip,
)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def quantize(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def _write_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(quantize(arr)).save(path, optimize=False)


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 255.0


def write_frames(directory: Path, frames: np.ndarray) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        _write_png(directory / f"{t:04d}.png", f)


def read_frames(directory: Path) -> np.ndarray:
    files = sorted(directory.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no frames in {directory}")
    return np.stack([_read_png(p) for p in files])


def save_clip(path, bundle: AgnosticBundle, garment: Optional[GarmentImage] = None,
              target: Optional[VideoClip] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    frames = bundle.agnostic.frames
    n, H, W, _ = frames.shape
    write_frames(path / "agnostic", frames)
    write_frames(path / "mask", bundle.mask.masks)
    write_frames(path / "densepose", bundle.densepose.frames)
    if target is not None:
        write_frames(path / "target", target.frames)
    if garment is not None:
        _write_png(path / "garment.png", garment.image)
    manifest = {
        "format_version": FORMAT_VERSION,
        "N": n,
        "H": H,
        "W": W,
        "frame_rate": bundle.frame_rate,
        "fill_value": bundle.agnostic.fill_value,
        "background_color": list(bundle.densepose.background_color),
        "has_target": target is not None,
        "garment_category": garment.category if garment is not None else None,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    f = path / MANIFEST
    if not f.is_file():
        raise FileNotFoundError(f"{path} is not a clip directory (missing {MANIFEST})")
    return json.loads(f.read_text())


def load_clip(path) -> tuple[AgnosticBundle, Optional[GarmentImage], Optional[VideoClip]]:
    """Read a clip directory back into ``(bundle, garment, target)``."""
    path = Path(path)
    meta = load_manifest(path)
    agn = read_frames(path / "agnostic")
    masks = (read_frames(path / "mask") > 0.5).astype(np.float64)
    pose = read_frames(path / "densepose")
    if not (len(agn) == len(masks) == len(pose) == meta["N"]):
        raise ValueError(f"{path}: frame counts disagree with manifest N={meta['N']}")
    bundle = AgnosticBundle(
        AgnosticVideo(agn, meta["fill_value"]),
        AgnosticMask(masks),
        DensePoseClip(pose, tuple(meta["background_color"])),
        meta["frame_rate"],
    )
    garment = None
    if (path / "garment.png").is_file():
        garment = GarmentImage(_read_png(path / "garment.png"), meta.get("garment_category") or "upper")
    target = VideoClip(read_frames(path / "target"), meta["frame_rate"]) if meta.get("has_target") else None
    return bundle, garment, target


def save_video(path, clip: VideoClip) -> Path:
    path = Path(path)
    write_frames(path, clip.frames)
    return path


def load_video(path, frame_rate: float = 8.0) -> VideoClip:
    """A bare frame directory, or the ``target`` frames of a clip directory."""
    path = Path(path)
    if (path / MANIFEST).is_file():
        meta = load_manifest(path)
        sub = path / "target" if meta.get("has_target") else path / "agnostic"
        return VideoClip(read_frames(sub), meta["frame_rate"])
    return VideoClip(read_frames(path), frame_rate)


def write_plan(path, plan: dict) -> None:
    Path(path).write_text(json.dumps(plan, indent=2) + "\n")


def read_plan(path) -> dict:
    plan = json.loads(Path(path).read_text())
    if "omega" not in plan and "segments" not in plan:
        raise ValueError(f"plan file {path} has neither keyframes nor segments")
    return plan


class MetricsLog:
    """Append-only line-delimited JSON records."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def write_metrics(path, records: Iterable[dict]) -> None:
    with MetricsLog(path) as log:
        for r in records:
            log.write(r)
