"""EDM preconditioning, denoising score-matching loss and the Euler sampler.

Functions are written against the array API shared by numpy and torch
(``*``, ``+``, ``.mean()``), so the same code drives the numpy oracles in
the tests and the torch training loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from tryonvid.errors import DimensionError, ScheduleError

SIGMA_DATA = 0.5


@dataclass(frozen=True)
class NoiseLevelSchedule:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    num_steps: int = 18
    sigma_data: float = SIGMA_DATA
    P_mean: float = -1.2
    P_std: float = 1.2

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ScheduleError("need 0 < sigma_min < sigma_max")
        if self.num_steps < 1:
            raise ScheduleError("num_steps must be >= 1")
        if self.sigma_data <= 0 or self.rho <= 0 or self.P_std < 0:
            raise ScheduleError("sigma_data and rho must be positive, P_std nonnegative")


@dataclass(frozen=True)
class Preconditioning:
    c_skip: float
    c_out: float
    c_in: float
    c_noise: float


def precondition(sigma: float, sigma_data: float = SIGMA_DATA) -> Preconditioning:
    """Standard EDM coefficients. ``c_noise`` is ``-inf`` at ``sigma = 0``."""
    sigma = float(sigma)
    if sigma < 0 or math.isnan(sigma):
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    denom = sigma * sigma + sigma_data * sigma_data
    c_skip = sigma_data**2 / denom
    c_out = sigma * sigma_data / math.sqrt(denom)
    c_in = 1.0 / math.sqrt(denom)
    c_noise = 0.25 * math.log(sigma) if sigma > 0 else -math.inf
    return Preconditioning(c_skip, c_out, c_in, c_noise)


def loss_weight(sigma: float, sigma_data: float = SIGMA_DATA) -> float:
    """EDM weighting (sigma^2 + sigma_d^2) / (sigma * sigma_d)^2."""
    if sigma <= 0:
        raise ValueError("loss weight is defined for sigma > 0 only")
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def apply_denoiser(raw_net: Callable, x, sigma: float, cond=None, sigma_data: float = SIGMA_DATA):
    """``c_skip * x + c_out * raw_net(c_in * x, c_noise, cond)``.

    At ``sigma = 0`` the network is not evaluated: ``c_out`` vanishes and the
    input is returned unchanged.
    """
    pc = precondition(sigma, sigma_data)
    if pc.c_out == 0.0:
        return x * 1.0
    out = raw_net(x * pc.c_in, pc.c_noise, cond)
    if tuple(out.shape) != tuple(x.shape):
        raise DimensionError(f"raw network returned {tuple(out.shape)}, expected {tuple(x.shape)}")
    return x * pc.c_skip + out * pc.c_out


def dsm_loss(
    denoiser: Callable,
    x0,
    noise,
    sigma: float,
    cond=None,
    weight: Optional[Callable[[float], float]] = None,
):
    """lambda(sigma) * mean((D(x0 + noise; sigma) - x0)^2).

    ``noise`` is the already-scaled perturbation (std ``sigma``).
    """
    if tuple(x0.shape) != tuple(noise.shape):
        raise DimensionError(f"x0 {tuple(x0.shape)} and noise {tuple(noise.shape)} differ")
    if sigma <= 0:
        raise ValueError("dsm_loss requires sigma > 0")
    lam = (weight or loss_weight)(sigma)
    d = denoiser(x0 + noise, sigma, cond)
    return lam * ((d - x0) ** 2).mean()


def sample_sigma(rng: np.random.Generator, schedule: NoiseLevelSchedule = NoiseLevelSchedule(), size=None):
    """Log-normal training noise levels exp(N(P_mean, P_std))."""
    return np.exp(rng.normal(schedule.P_mean, schedule.P_std, size=size))


def sigma_steps(schedule: NoiseLevelSchedule) -> np.ndarray:
    """Rho-spaced decreasing ladder sigma_max ... sigma_min followed by 0."""
    n = schedule.num_steps
    if n == 1:
        return np.array([schedule.sigma_max, 0.0])
    inv = 1.0 / schedule.rho
    i = np.arange(n)
    hi, lo = schedule.sigma_max**inv, schedule.sigma_min**inv
    ladder = (hi + i / (n - 1) * (lo - hi)) ** schedule.rho
    return np.append(ladder, 0.0)


def euler_sample(
    denoiser: Callable,
    x_T,
    schedule,
    cond=None,
    callback: Optional[Callable[[int, float, object], None]] = None,
):
    """Deterministic first-order probability-flow sampler.

    ``schedule`` is a :class:`NoiseLevelSchedule` or an explicit ladder.
    ``callback(step, sigma_next, x)`` sees every intermediate state.
    """
    sigmas = sigma_steps(schedule) if isinstance(schedule, NoiseLevelSchedule) else np.asarray(schedule, float)
    if sigmas.ndim != 1 or len(sigmas) < 2:
        raise ScheduleError("ladder needs at least two entries")
    if np.any(np.diff(sigmas) >= 0):
        raise ScheduleError("ladder must be strictly decreasing")
    if np.any(sigmas[:-1] <= 0):
        raise ScheduleError("sigma reached 0 before the last step")
    x = x_T
    for k in range(len(sigmas) - 1):
        s_cur, s_next = float(sigmas[k]), float(sigmas[k + 1])
        d = (x - denoiser(x, s_cur, cond)) / s_cur
        x = x + (s_next - s_cur) * d
        if callback is not None:
            callback(k, s_next, x)
    return x
