"""Key/value construction for garment-aware spatial self-attention.

Per frame ``i`` the queries come from that frame's tokens; what differs is
the key/value token set:

* reference:       ``[frame i | garment]``
* cross-frame:     ``[frame 0 | frame i-1]``               (baseline)
* clothing/temporal: ``[frame i | frame j | garment]``, ``j != i - 1``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from tryonvid.errors import ConfigurationError, DimensionError, PolicyViolationError

SelectionMode = Literal["train_random", "infer_deterministic", "fixed_zero", "crossframe_baseline"]
SELECTION_MODES = ("train_random", "infer_deterministic", "fixed_zero", "crossframe_baseline")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def scaled_dot_attention(Q, K, V, head_count: int = 1, return_weights: bool = False):
    """Softmax(Q K^T / sqrt(d_head)) V with ``d`` split across heads.

    Leading batch dimensions are broadcast. With ``return_weights`` the
    per-head probabilities (``... x heads x L_q x L_k``) are returned too.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"incompatible Q {Q.shape}, K {K.shape}, V {V.shape}")
    if K.shape[-2] < 1:
        raise DimensionError("attention needs at least one key")
    d = Q.shape[-1]
    if d % head_count:
        raise DimensionError(f"width {d} not divisible by {head_count} heads")
    dh = d // head_count
    dv = V.shape[-1] // head_count

    def split(x, width):
        return np.moveaxis(x.reshape(*x.shape[:-1], head_count, width), -2, -3)

    q, k, v = split(Q, dh), split(K, dh), split(V, dv)
    w = softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(dh), axis=-1)
    out = np.moveaxis(w @ v, -3, -2)
    out = out.reshape(*out.shape[:-2], head_count * dv)
    return (out, w) if return_weights else out


@dataclass(frozen=True)
class FrameFeatureBank:
    """Per-frame token blocks (``N x L x d``) and the garment block (``L_c x d``)."""

    blocks: np.ndarray
    garment: Optional[np.ndarray] = None

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=np.float64)
        if b.ndim != 3:
            raise DimensionError(f"frame blocks must be N x L x d, got {b.shape}")
        object.__setattr__(self, "blocks", b)
        if self.garment is not None:
            g = np.asarray(self.garment, dtype=np.float64)
            if g.ndim != 2 or g.shape[1] != b.shape[2]:
                raise DimensionError(f"garment block {g.shape} does not match width {b.shape[2]}")
            object.__setattr__(self, "garment", g)

    @property
    def num_frames(self) -> int:
        return self.blocks.shape[0]

    def frame(self, i: int) -> np.ndarray:
        if not 0 <= i < self.num_frames:
            raise IndexError(f"frame {i} outside 0..{self.num_frames - 1}")
        return self.blocks[i]

    def garment_tokens(self) -> np.ndarray:
        if self.garment is None or self.garment.shape[0] == 0:
            raise ConfigurationError("feature bank has no garment tokens")
        return self.garment


def build_kv_reference(bank: FrameFeatureBank, i: int) -> np.ndarray:
    return np.concatenate([bank.frame(i), bank.garment_tokens()], axis=0)


def build_kv_crossframe_baseline(bank: FrameFeatureBank, i: int) -> np.ndarray:
    """``[frame 0 | frame i-1]``; frame -1 is taken to be frame 0."""
    if bank.num_frames == 0:
        raise ConfigurationError("empty feature bank")
    return np.concatenate([bank.frame(0), bank.frame(max(i - 1, 0))], axis=0)


def build_kv_ctc(bank: FrameFeatureBank, i: int, j: int) -> np.ndarray:
    if j == i - 1:
        raise PolicyViolationError(f"frame j={j} is the immediate predecessor of i={i}")
    return np.concatenate([bank.frame(i), bank.frame(j), bank.garment_tokens()], axis=0)


def allowed_partners(i: int, n: int) -> list[int]:
    return [j for j in range(n) if j != i - 1]


@dataclass
class FrameSelectionPolicy:
    mode: SelectionMode = "infer_deterministic"
    rng_seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}")
        self._rng = np.random.default_rng(self.rng_seed)

    def select(self, i: int, n: int) -> int:
        return select_frame_j(self, i, n, self._rng)


def select_frame_j(policy: FrameSelectionPolicy, i: int, n: int, rng: Optional[np.random.Generator] = None) -> int:
    """Partner frame for frame ``i`` of an ``n``-frame window.

    ``infer_deterministic`` offsets by half the window, so early frames look
    ahead and late frames look back, and steps past ``i - 1`` if it lands
    there. ``train_random`` draws uniformly over every frame but ``i - 1``.
    """
    if n < 1 or not 0 <= i < n:
        raise ValueError(f"frame {i} outside window of {n}")
    mode = policy.mode
    if mode == "fixed_zero":
        return 0
    if mode == "crossframe_baseline":
        return max(i - 1, 0)
    if n == 1:
        return 0
    if mode == "train_random":
        if rng is None:
            rng = np.random.default_rng(policy.rng_seed)
        choices = allowed_partners(i, n)
        return int(choices[rng.integers(len(choices))])
    j = (i + n // 2) % n
    if j == i - 1:
        j = (j + 1) % n
    return j


def kv_for_frame(bank: FrameFeatureBank, i: int, policy: Optional[FrameSelectionPolicy], rng=None) -> np.ndarray:
    """Key/value tokens for frame ``i``; ``policy=None`` means garment reference only."""
    if policy is None:
        return build_kv_reference(bank, i)
    j = select_frame_j(policy, i, bank.num_frames, rng)
    if policy.mode == "crossframe_baseline":
        return np.concatenate([build_kv_crossframe_baseline(bank, i), bank.garment_tokens()], axis=0)
    if policy.mode == "fixed_zero":
        return np.concatenate([bank.frame(i), bank.frame(j), bank.garment_tokens()], axis=0)
    return build_kv_ctc(bank, i, j)


def attend_frame(
    bank: FrameFeatureBank,
    queries: np.ndarray,
    i: int,
    policy: Optional[FrameSelectionPolicy] = None,
    head_count: int = 1,
    rng=None,
    return_weights: bool = False,
):
    """Attention for frame ``i`` with keys and values both taken from the token set."""
    kv = kv_for_frame(bank, i, policy, rng)
    return scaled_dot_attention(queries, kv, kv, head_count, return_weights)
