"""Mask-guided attention focus loss over garment attention probability maps.

``S`` is an ``N x T`` array: for frame ``i`` and spatial token ``a``, the
attention probability that token pays to the target garment. The agnostic
mask splits tokens into an in-mask set ``A`` and its complement. Two
variants are provided:

* ``initial``: every in-mask token is pushed to 1,
  ``sum_i sum_{a in A} (1 - S)^2 + lambda_N sum_i sum_{a not in A} S^2``
* ``refined``: only the strongest in-mask token per frame is pushed to 1,
  ``sum_i (1 - max_{a in A} S)^2 + lambda_N sum_i sum_{a not in A} S^2``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np

from tryonvid import kernels
from tryonvid.data import _as_mask
from tryonvid.errors import ConfigurationError, DegenerateMaskError, DimensionError

Variant = Literal["initial", "refined"]

# lambda_N presets: 0.01 balances ~120 negatives against one positive token;
# the ablation grid was run with 0.1.
LAMBDA_N_DEFAULT = 0.01
LAMBDA_N_ABLATION = 0.1
LAMBDA_AGN_DEFAULT = 0.5
COVERAGE_TOL = 1e-9


@dataclass(frozen=True)
class LossConfig:
    lambda_N: float = LAMBDA_N_DEFAULT
    lambda_agn: float = LAMBDA_AGN_DEFAULT
    variant: Variant = "refined"

    def __post_init__(self):
        if self.lambda_N < 0 or self.lambda_agn < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.variant not in ("initial", "refined"):
            raise ValueError(f"unknown loss variant {self.variant!r}")

    @classmethod
    def ablation(cls, lambda_agn: float = LAMBDA_AGN_DEFAULT, variant: Variant = "refined") -> "LossConfig":
        return cls(LAMBDA_N_ABLATION, lambda_agn, variant)


@dataclass(frozen=True)
class TokenRegionPartition:
    """Boolean ``N x T`` in-mask indicator on an ``h_t x w_t`` token grid."""

    in_mask: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        a = np.asarray(self.in_mask, dtype=bool)
        if a.ndim != 2 or a.shape[1] != self.grid[0] * self.grid[1]:
            raise DimensionError(f"partition shape {a.shape} does not match grid {self.grid}")
        object.__setattr__(self, "in_mask", a)

    @property
    def inside_tokens(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.in_mask]

    @property
    def outside_tokens(self) -> list[np.ndarray]:
        return [np.flatnonzero(~row) for row in self.in_mask]

    # short aliases used in formulas
    A = inside_tokens
    A_bar = outside_tokens

    @property
    def num_frames(self) -> int:
        return self.in_mask.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.in_mask.shape[1]

    @property
    def active_frames(self) -> np.ndarray:
        return self.in_mask.any(axis=1)


def token_coverage(mask, token_grid: tuple[int, int]) -> np.ndarray:
    """Fraction of each token cell covered by the mask, shape ``N x h_t x w_t``.

    Grids that do not divide the pixel grid use exact fractional box overlap,
    so coverage stays an area average either way.
    """
    m = _as_mask(mask)
    n, H, W = m.shape
    ht, wt = token_grid
    if ht < 1 or wt < 1:
        raise DimensionError("token grid must be positive")
    if H % ht == 0 and W % wt == 0:
        return m.reshape(n, ht, H // ht, wt, W // wt).mean(axis=(2, 4))
    ry = _overlap_matrix(H, ht)
    rx = _overlap_matrix(W, wt)
    return np.einsum("yh,nhw,xw->nyx", ry, m, rx)


def _overlap_matrix(pixels: int, cells: int) -> np.ndarray:
    # Row c: fraction of pixel p inside cell c, normalised by cell length.
    edges = np.linspace(0.0, pixels, cells + 1)
    p0 = np.arange(pixels)[None, :]
    lo = np.maximum(edges[:-1, None], p0)
    hi = np.minimum(edges[1:, None], p0 + 1)
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / (edges[1:, None] - edges[:-1, None])


def mask_to_partition(mask, token_grid: tuple[int, int], threshold: float = 0.5) -> TokenRegionPartition:
    """Token is in-mask iff its area coverage is strictly above ``threshold``.

    Coverage within ``COVERAGE_TOL`` of the threshold counts as on it, so
    exactly half-covered cells go to the complement despite rounding.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    cov = token_coverage(mask, token_grid)
    in_mask = (cov > threshold + COVERAGE_TOL).reshape(cov.shape[0], -1)
    if not in_mask.any():
        raise DegenerateMaskError("mask covers no token in any frame")
    return TokenRegionPartition(in_mask, tuple(token_grid))


def extract_attention_probs(
    attention_weights,
    garment_token_slice: slice,
    layers: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Garment attention probability per spatial query token.

    ``attention_weights`` is a list (one per layer) of post-softmax arrays of
    shape ``N x heads x L_q x L_k``, or one such array. Reduction: max over
    the garment key columns, then mean over heads and the chosen layers.
    """
    if isinstance(attention_weights, np.ndarray) and attention_weights.ndim == 4:
        attention_weights = [attention_weights]
    maps = list(attention_weights)
    if layers is not None:
        maps = [maps[k] for k in layers]
    if not maps:
        raise ConfigurationError("no attention layers selected")
    per_layer = []
    for w in maps:
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 4:
            raise DimensionError(f"attention weights must be N x heads x Lq x Lk, got {w.shape}")
        g = w[..., garment_token_slice]
        if g.shape[-1] == 0:
            raise ConfigurationError("garment token slice selects no key columns")
        per_layer.append(g.max(axis=-1).mean(axis=1))
    S = np.mean(per_layer, axis=0)
    return np.clip(S, 0.0, 1.0)


def _check(S, part: TokenRegionPartition, skip_empty: bool):
    S = np.asarray(S, dtype=np.float64)
    if S.shape != part.in_mask.shape:
        raise DimensionError(f"attention map {S.shape} does not match partition {part.in_mask.shape}")
    active = part.active_frames
    if not active.all():
        if not skip_empty:
            raise DegenerateMaskError(f"frames {np.flatnonzero(~active).tolist()} have no in-mask token")
        if not active.any():
            raise DegenerateMaskError("no frame has an in-mask token")
        return S[active], part.in_mask[active], active
    return S, part.in_mask, active


def loss_agn_init(S, part: TokenRegionPartition, lambda_N: float = LAMBDA_N_DEFAULT, skip_empty: bool = False) -> float:
    S, A, _ = _check(S, part, skip_empty)
    return kernels.agn_loss_grad(S, A, lambda_N, False, False)[0]


def loss_agn(S, part: TokenRegionPartition, lambda_N: float = LAMBDA_N_DEFAULT, skip_empty: bool = False) -> float:
    S, A, _ = _check(S, part, skip_empty)
    return kernels.agn_loss_grad(S, A, lambda_N, True, False)[0]


def _grad(S, part, lambda_N, refined, skip_empty):
    S_full = np.asarray(S, dtype=np.float64)
    S_act, A, active = _check(S_full, part, skip_empty)
    loss, g = kernels.agn_loss_grad(S_act, A, lambda_N, refined, True)
    if g.shape == S_full.shape:
        return loss, g
    full = np.zeros_like(S_full)
    full[active] = g
    return loss, full


def grad_loss_agn(S, part: TokenRegionPartition, lambda_N: float = LAMBDA_N_DEFAULT, skip_empty: bool = False) -> np.ndarray:
    """Analytic (sub)gradient of :func:`loss_agn`.

    The in-mask term contributes only at each frame's argmax token, lowest
    index on ties.
    """
    return _grad(S, part, lambda_N, True, skip_empty)[1]


def grad_loss_agn_init(S, part: TokenRegionPartition, lambda_N: float = LAMBDA_N_DEFAULT, skip_empty: bool = False) -> np.ndarray:
    return _grad(S, part, lambda_N, False, skip_empty)[1]


def loss_and_grad(S, part: TokenRegionPartition, config: LossConfig = LossConfig(), skip_empty: bool = False):
    return _grad(S, part, config.lambda_N, config.variant == "refined", skip_empty)


def loss_total(dsm: float, agn: float, lambda_agn: float = LAMBDA_AGN_DEFAULT):
    if lambda_agn < 0:
        raise ValueError("lambda_agn must be nonnegative")
    return dsm + lambda_agn * agn


def negative_ratio(part: TokenRegionPartition) -> np.ndarray:
    """Out-of-mask token count per frame, i.e. negatives per single positive token."""
    return (~part.in_mask).sum(axis=1).astype(np.float64)


def attention_mass(S, part: TokenRegionPartition) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame total garment attention inside and outside the mask."""
    S = np.asarray(S, dtype=np.float64)
    A = part.in_mask
    return np.where(A, S, 0.0).sum(axis=1), np.where(A, 0.0, S).sum(axis=1)


def in_mask_mass_ratio(S, part: TokenRegionPartition) -> float:
    """Share of all garment attention that lands inside the mask."""
    inside, outside = attention_mass(S, part)
    total = inside.sum() + outside.sum()
    return float(inside.sum() / total) if total > 0 else 0.0
