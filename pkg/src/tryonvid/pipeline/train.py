"""Training and sampling loops for the toy try-on generator."""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from tryonvid import agn_loss, edm
from tryonvid.attention import FrameSelectionPolicy
from tryonvid.data import (
    AgnosticBundle,
    GarmentImage,
    VideoClip,
    decode_latent,
    encode_latent,
    resize_mask_to_latent,
)
from tryonvid.errors import ConfigurationError, NonFiniteLossError
from tryonvid.pipeline.networks import ToyDenoiser, partners_for

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TRYONVID"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 2
    lambda_agn: float = agn_loss.LAMBDA_AGN_DEFAULT
    lambda_N: float = agn_loss.LAMBDA_N_DEFAULT
    ct: bool = True
    variant: str = "refined"
    steps: int = 500
    seed: int = 0
    heads: int = 4
    window: int = 8
    token_threshold: float = 0.5
    sigma_data: float = edm.SIGMA_DATA
    P_mean: float = -1.2
    P_std: float = 1.2
    grad_clip: Optional[float] = 1.0
    dump_dir: Optional[str] = None

    def __post_init__(self):
        if self.lr <= 0 or self.steps < 0 or self.batch_size < 1:
            raise ValueError("learning rate and batch size must be positive, steps nonnegative")
        if self.variant not in ("initial", "refined"):
            raise ValueError(f"unknown loss variant {self.variant!r}")

    @property
    def loss_config(self) -> agn_loss.LossConfig:
        return agn_loss.LossConfig(self.lambda_N, self.lambda_agn, self.variant)


class AgnosticAttentionLoss(torch.autograd.Function):
    """Torch wrapper around the analytic loss/gradient kernels."""

    @staticmethod
    def forward(ctx, S, in_mask, lambda_N, refined):
        S_np = S.detach().double().cpu().numpy()
        part = agn_loss.TokenRegionPartition(in_mask, (1, in_mask.shape[1]))
        cfg_variant = "refined" if refined else "initial"
        loss, grad = agn_loss.loss_and_grad(
            S_np, part, agn_loss.LossConfig(lambda_N, 0.0, cfg_variant), skip_empty=True
        )
        ctx.save_for_backward(torch.as_tensor(grad, dtype=S.dtype))
        return S.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad_out):
        (grad,) = ctx.saved_tensors
        return grad_out * grad, None, None, None


def garment_attention_probs(weights: torch.Tensor, num_garment: int) -> torch.Tensor:
    """(N, heads, L, L_k) softmax weights -> (N, L) max over garment keys, mean over heads."""
    return weights[..., -num_garment:].amax(dim=-1).mean(dim=1)


def _to_chw(frames: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)), dtype=torch.float32)


@dataclass
class PreparedClip:
    """Torch tensors for one clip, channels-first."""

    agnostic: torch.Tensor  # (N, 4, h, w)
    mask: torch.Tensor  # (N, 1, h, w)
    pose: torch.Tensor  # (N, 3, H, W)
    garment: torch.Tensor  # (3, H_c, W_c)
    in_mask: np.ndarray  # (N, T) token partition
    target: Optional[torch.Tensor] = None  # (N, 4, h, w)


def prepare_clip(bundle: AgnosticBundle, garment: GarmentImage, target: Optional[VideoClip] = None,
                 token_grid: tuple[int, int] = (8, 6), threshold: float = 0.5) -> PreparedClip:
    za = encode_latent(bundle.agnostic).latents
    m = resize_mask_to_latent(bundle.mask, 2)
    in_mask = agn_loss.mask_to_partition(bundle.mask, token_grid, threshold).in_mask
    return PreparedClip(
        agnostic=_to_chw(za),
        mask=torch.as_tensor(m[:, None], dtype=torch.float32),
        pose=_to_chw(bundle.densepose.frames),
        garment=torch.as_tensor(garment.image.transpose(2, 0, 1).copy(), dtype=torch.float32),
        in_mask=in_mask,
        target=_to_chw(encode_latent(target).latents) if target is not None else None,
    )


@dataclass
class ModelState:
    model: ToyDenoiser
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    torch_gen: torch.Generator = field(default_factory=torch.Generator)

    @classmethod
    def create(cls, config: TrainConfig) -> "ModelState":
        model = ToyDenoiser(heads=config.heads, seed=config.seed)
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        gen = torch.Generator().manual_seed(config.seed + 1)
        return cls(model, opt, config, 0, np.random.default_rng(config.seed + 2), gen)

    def policy(self, training: bool) -> Optional[FrameSelectionPolicy]:
        if not self.config.ct:
            return None
        return FrameSelectionPolicy("train_random" if training else "infer_deterministic", self.config.seed)


def denoise(model: ToyDenoiser, clip: PreparedClip, x, sigma: float, policy, rng=None, sigma_data=edm.SIGMA_DATA):
    """EDM-wrapped denoiser; returns ``(D(x; sigma), attention weights or None)``."""
    garment_tokens = model.reference(clip.garment)
    mode, partners = partners_for(policy, x.shape[0], rng)
    weights = {}

    def raw(x_in, c_noise, cond):
        x9 = torch.cat([x_in, clip.agnostic, clip.mask], dim=1)
        out, w = model(x9, c_noise, clip.pose, garment_tokens, partners, mode)
        weights["w"] = w
        return out

    d = edm.apply_denoiser(raw, x, sigma, None, sigma_data)
    return d, weights.get("w"), garment_tokens.shape[0]


def train_step(state: ModelState, clip: PreparedClip, config: Optional[TrainConfig] = None) -> dict:
    """One optimiser step on ``dsm + lambda_agn * agn`` averaged over ``batch_size`` noise draws."""
    cfg = config or state.config
    model = state.model
    model.train()
    policy = state.policy(training=True)
    schedule = edm.NoiseLevelSchedule(sigma_data=cfg.sigma_data, P_mean=cfg.P_mean, P_std=cfg.P_std)
    state.optimizer.zero_grad(set_to_none=True)
    rec = {"step": state.step, "dsm": 0.0, "agn": 0.0, "in_mask_mass": 0.0, "out_mask_mass": 0.0}
    total = 0.0
    refined = cfg.variant == "refined"
    for _ in range(cfg.batch_size):
        sigma = float(edm.sample_sigma(state.rng, schedule))
        noise = torch.randn(clip.target.shape, generator=state.torch_gen) * sigma
        cache = {}

        def denoiser(x, s, cond):
            d, w, lc = denoise(model, clip, x, s, policy, state.rng, cfg.sigma_data)
            cache["w"], cache["lc"] = w, lc
            return d

        dsm = edm.dsm_loss(denoiser, clip.target, noise, sigma, weight=lambda s: edm.loss_weight(s, cfg.sigma_data))
        S = garment_attention_probs(cache["w"], cache["lc"])
        agn = AgnosticAttentionLoss.apply(S, clip.in_mask, cfg.lambda_N, refined)
        if cfg.lambda_agn > 0:
            loss = agn_loss.loss_total(dsm, agn, cfg.lambda_agn)
        else:
            loss = dsm
        loss = loss / cfg.batch_size
        if not torch.isfinite(loss):
            _dump(state, cfg, {"sigma": sigma, "dsm": float(dsm.detach()), "agn": float(agn.detach())})
            raise NonFiniteLossError(f"non-finite loss at step {state.step}: dsm={float(dsm.detach())}, agn={float(agn.detach())}, sigma={sigma}")
        loss.backward()
        total += float(loss.detach())
        inside, outside = agn_loss.attention_mass(S.detach().double().numpy(), agn_loss.TokenRegionPartition(clip.in_mask, (1, clip.in_mask.shape[1])))
        rec["dsm"] += float(dsm.detach()) / cfg.batch_size
        rec["agn"] += float(agn.detach()) / cfg.batch_size
        rec["in_mask_mass"] += float(inside.sum()) / cfg.batch_size
        rec["out_mask_mass"] += float(outside.sum()) / cfg.batch_size
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.step += 1
    rec["total"] = total
    return rec


def _dump(state: ModelState, cfg: TrainConfig, info: dict) -> None:
    if not cfg.dump_dir:
        return
    path = Path(cfg.dump_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / f"nonfinite_step{state.step}.json").write_text(json.dumps({"step": state.step, **info}, default=str))
    save_checkpoint(state, path / f"nonfinite_step{state.step}.ckpt")


def overfit_clip(
    bundle: AgnosticBundle,
    garment: GarmentImage,
    target: VideoClip,
    config: TrainConfig,
    on_step: Optional[Callable[[dict], None]] = None,
    state: Optional[ModelState] = None,
) -> tuple[ModelState, list[dict]]:
    torch.manual_seed(config.seed)
    state = state or ModelState.create(config)
    clip = prepare_clip(bundle, garment, target, threshold=config.token_threshold)
    curve = []
    for _ in range(config.steps):
        rec = train_step(state, clip)
        curve.append(rec)
        if on_step is not None:
            on_step(rec)
    return state, curve


@torch.no_grad()
def infer_latents(state: ModelState, clip: PreparedClip, schedule: edm.NoiseLevelSchedule, seed: int = 0,
                  callback=None) -> torch.Tensor:
    model = state.model
    model.eval()
    policy = state.policy(training=False)
    n = clip.agnostic.shape[0]
    if n > state.config.window:
        raise ConfigurationError(f"{n} frames exceed the generator window {state.config.window}; use long-infer")
    gen = torch.Generator().manual_seed(seed)
    x_T = torch.randn(clip.agnostic.shape, generator=gen) * schedule.sigma_max

    def denoiser(x, s, cond):
        return denoise(model, clip, x, s, policy, None, state.config.sigma_data)[0]

    return edm.euler_sample(denoiser, x_T, schedule, callback=callback)


def infer_clip(bundle: AgnosticBundle, garment: GarmentImage, state: ModelState,
               schedule: edm.NoiseLevelSchedule, seed: int = 0, callback=None) -> VideoClip:
    clip = prepare_clip(bundle, garment, threshold=state.config.token_threshold)
    z = infer_latents(state, clip, schedule, seed, callback)
    return decode_latent(z.permute(0, 2, 3, 1).double().numpy())


def latent_generator(state: ModelState, garment: GarmentImage, schedule: edm.NoiseLevelSchedule, seed: int = 0):
    """Adapter for long-video orchestration: works in latent space (N, h, w, 4)."""
    garment_t = torch.as_tensor(garment.image.transpose(2, 0, 1).copy(), dtype=torch.float32)

    def generate(stream: np.ndarray, masks: np.ndarray, poses: np.ndarray) -> np.ndarray:
        clip = PreparedClip(
            agnostic=_to_chw(stream),
            mask=torch.as_tensor(masks[:, None], dtype=torch.float32),
            pose=_to_chw(poses),
            garment=garment_t,
            in_mask=np.zeros((len(stream), 48), dtype=bool),
        )
        z = infer_latents(state, clip, schedule, seed)
        return z.permute(0, 2, 3, 1).double().numpy()

    return generate


def save_checkpoint(state: ModelState, path) -> None:
    buf = io.BytesIO()
    torch.save({"model": state.model.state_dict(), "optimizer": state.optimizer.state_dict(), "step": state.step}, buf)
    meta = json.dumps(asdict(state.config)).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta)))
        f.write(meta)
        f.write(buf.getvalue())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        version, n = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = TrainConfig(**json.loads(f.read(n)))
        blob = torch.load(io.BytesIO(f.read()), weights_only=True)
    state = ModelState.create(config)
    state.model.load_state_dict(blob["model"])
    state.optimizer.load_state_dict(blob["optimizer"])
    state.step = blob["step"]
    return state


@torch.no_grad()
def measure_attention_ratio(state: ModelState, clip: PreparedClip, sigmas=(0.05, 0.2, 0.5, 1.0, 2.0), seed: int = 0) -> float:
    """In-mask share of garment attention, averaged over fixed noise levels and noise draws."""
    model = state.model
    model.eval()
    policy = state.policy(training=False)
    gen = torch.Generator().manual_seed(seed)
    part = agn_loss.TokenRegionPartition(clip.in_mask, (1, clip.in_mask.shape[1]))
    inside = outside = 0.0
    for sigma in sigmas:
        x = clip.target + torch.randn(clip.target.shape, generator=gen) * sigma
        _, w, lc = denoise(model, clip, x, sigma, policy, None, state.config.sigma_data)
        i, o = agn_loss.attention_mass(garment_attention_probs(w, lc).double().numpy(), part)
        inside += float(i.sum())
        outside += float(o.sum())
    return inside / (inside + outside)


def attention_mass_ratio(curve: list[dict], last: int = 50) -> float:
    tail = curve[-last:]
    inside = sum(r["in_mask_mass"] for r in tail)
    outside = sum(r["out_mask_mass"] for r in tail)
    return inside / (inside + outside) if inside + outside > 0 else math.nan
