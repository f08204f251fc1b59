"""Static figures: per-metric curves and frame grids."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def metric_names(records: Sequence[dict], x_key: str = "step") -> list[str]:
    names = set()
    for r in records:
        for k, v in r.items():
            if k != x_key and isinstance(v, (int, float)) and not isinstance(v, bool):
                names.add(k)
    return sorted(names)


def plot_metrics(records: Sequence[dict], out_dir, x_key: str = "step") -> list[Path]:
    """One PNG per numeric field, plotted against ``x_key`` (or record index)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in metric_names(records, x_key):
        xs = [r.get(x_key, i) for i, r in enumerate(records) if name in r]
        ys = [r[name] for r in records if name in r]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(xs, ys, lw=1.2)
        ax.set_xlabel(x_key)
        ax.set_ylabel(name)
        if all(y > 0 for y in ys) and max(ys) / max(min(ys), 1e-300) > 100:
            ax.set_yscale("log")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"{name}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths


def frame_grid(rows: Mapping[str, np.ndarray], path, max_frames: int = 8) -> Path:
    """Rows of frames (name -> N x H x W x 3), one column per frame."""
    n = min(max_frames, max(len(v) for v in rows.values()))
    fig, axes = plt.subplots(len(rows), n, figsize=(1.2 * n, 1.6 * len(rows)), squeeze=False)
    for r, (name, frames) in enumerate(rows.items()):
        for c in range(n):
            ax = axes[r][c]
            ax.axis("off")
            if c < len(frames):
                ax.imshow(np.clip(frames[c], 0, 1))
        axes[r][0].set_title(name, fontsize=8, loc="left")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def ablation_table_figure(rows: Sequence[dict], path, value: str = "in_mask_ratio") -> Path:
    lams = sorted({r["lambda_agn"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 3.2))
    width = 0.8 / 2
    for k, ct in enumerate((True, False)):
        ys = [next((r[value] for r in rows if r["lambda_agn"] == lam and r["ct"] == ct), math.nan) for lam in lams]
        ax.bar(np.arange(len(lams)) + (k - 0.5) * width, ys, width, label=f"ct {'on' if ct else 'off'}")
    ax.set_xticks(range(len(lams)), [str(lam) for lam in lams])
    ax.set_xlabel("lambda_agn")
    ax.set_ylabel(value)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
