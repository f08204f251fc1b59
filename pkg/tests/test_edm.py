import math

import numpy as np
import pytest

from tryonvid import edm
from tryonvid.errors import DimensionError, ScheduleError


def test_precondition_limits_and_values():
    pc = edm.precondition(1e-12)
    assert pc.c_skip == pytest.approx(1.0)
    assert pc.c_out == pytest.approx(0.0, abs=1e-11)
    pc = edm.precondition(0.5)
    assert pc.c_skip == pytest.approx(0.5, abs=1e-15)
    assert pc.c_out == pytest.approx(0.25 / math.sqrt(0.5), abs=1e-15)
    assert pc.c_out == pytest.approx(0.353553, abs=1e-6)
    assert pc.c_in == pytest.approx(1.414214, abs=1e-6)
    assert pc.c_noise == pytest.approx(0.25 * math.log(0.5))
    with pytest.raises(ValueError):
        edm.precondition(-0.1)


def test_precondition_unit_variance():
    # c_skip^2 sd^2 + c_out^2 ... : the target (x0 - c_skip x)/c_out has unit variance
    sd = 0.5
    for s in [0.01, 0.3, 1.0, 7.0, 80.0]:
        pc = edm.precondition(s, sd)
        var = ((1 - pc.c_skip) ** 2 * sd**2 + pc.c_skip**2 * s**2) / pc.c_out**2
        assert var == pytest.approx(1.0)
        assert pc.c_in**2 * (s**2 + sd**2) == pytest.approx(1.0)


def test_apply_denoiser_examples(rng):
    x = rng.standard_normal((2, 3, 3, 4))
    zero = lambda x, c, cond: np.zeros_like(x)
    ident = lambda x, c, cond: x
    assert np.allclose(edm.apply_denoiser(zero, x, 0.5), 0.5 * x)
    assert np.array_equal(edm.apply_denoiser(lambda *a: np.full_like(x, 1e9), x, 0.0), x)
    assert np.allclose(edm.apply_denoiser(ident, x, 0.5), x, atol=1e-12)
    with pytest.raises(DimensionError):
        edm.apply_denoiser(lambda x, c, cond: x[:1], x, 0.5)


def test_dsm_loss_examples(rng):
    x0 = rng.standard_normal((1, 2, 2, 4))
    n = rng.standard_normal(x0.shape) * 0.3
    perfect = lambda x, s, c: x0
    assert edm.dsm_loss(perfect, x0, n, 0.3) == 0.0
    passthrough = lambda x, s, c: x
    assert edm.dsm_loss(passthrough, x0, n, 0.3) == pytest.approx(edm.loss_weight(0.3) * np.mean(n**2))
    x0 = np.zeros(2)
    const = lambda x, s, c: np.ones(2)
    assert edm.dsm_loss(const, x0, np.zeros(2), 1.0, weight=lambda s: 2.0) == 2.0
    with pytest.raises(DimensionError):
        edm.dsm_loss(const, x0, np.zeros(3), 1.0)


def test_loss_weight():
    # (sigma^2 + sd^2) / (sigma sd)^2 at sigma = sd = 0.5 -> 0.5 / 0.0625
    assert edm.loss_weight(0.5) == pytest.approx(8.0)


def test_sigma_ladder():
    sch = edm.NoiseLevelSchedule(num_steps=1)
    assert list(edm.sigma_steps(sch)) == [80.0, 0.0]
    sch = edm.NoiseLevelSchedule(sigma_min=0.002, sigma_max=80, rho=7, num_steps=3)
    ladder = edm.sigma_steps(sch)
    mid = (80 ** (1 / 7) + 0.5 * (0.002 ** (1 / 7) - 80 ** (1 / 7))) ** 7
    assert ladder[1] == pytest.approx(mid, rel=1e-12)
    assert ladder[0] == pytest.approx(80) and ladder[2] == pytest.approx(0.002) and ladder[3] == 0
    long = edm.sigma_steps(edm.NoiseLevelSchedule(num_steps=40))
    assert np.all(np.diff(long) < 0) and long[-1] == 0


def test_sample_sigma_positive():
    s = edm.sample_sigma(np.random.default_rng(0), size=10_000)
    assert np.all(s > 0)
    assert np.mean(np.log(s)) == pytest.approx(-1.2, abs=0.05)
    assert np.std(np.log(s)) == pytest.approx(1.2, abs=0.05)


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        edm.NoiseLevelSchedule(sigma_min=1.0, sigma_max=0.5)
    with pytest.raises(ScheduleError):
        edm.NoiseLevelSchedule(num_steps=0)


def test_euler_identity_denoiser(rng):
    x = rng.standard_normal((2, 2, 2, 4))
    out = edm.euler_sample(lambda x, s, c: x, x, edm.NoiseLevelSchedule(num_steps=5))
    assert np.array_equal(out, x)


def test_euler_one_step_lands_on_target(rng):
    target = rng.standard_normal((3, 4))
    x_T = rng.standard_normal((3, 4)) * 80
    out = edm.euler_sample(lambda x, s, c: target, x_T, [80.0, 0.0])
    assert np.allclose(out, target, atol=1e-9, rtol=0)


def test_euler_two_step_linear_oracle():
    alpha, x0 = 0.7, 1.3
    s0, s1 = 10.0, 2.0
    # scalar recurrence evaluated by hand
    x1 = x0 + (s1 - s0) * (x0 - alpha * x0) / s0
    x2 = x1 + (0.0 - s1) * (x1 - alpha * x1) / s1
    out = edm.euler_sample(lambda x, s, c: alpha * x, np.array([x0]), [s0, s1, 0.0])
    assert out[0] == pytest.approx(x2, rel=1e-14)


def test_euler_deterministic_and_schedule_errors(rng):
    x = rng.standard_normal(5)
    den = lambda x, s, c: np.tanh(x) * s / (1 + s)
    a = edm.euler_sample(den, x, edm.NoiseLevelSchedule(num_steps=6))
    b = edm.euler_sample(den, x, edm.NoiseLevelSchedule(num_steps=6))
    assert np.array_equal(a, b)
    with pytest.raises(ScheduleError):
        edm.euler_sample(den, x, [1.0, 0.0, 0.0])
    with pytest.raises(ScheduleError):
        edm.euler_sample(den, x, [1.0, 2.0])


def test_euler_callback_sees_every_step(rng):
    seen = []
    edm.euler_sample(lambda x, s, c: x * 0, np.ones(2), edm.NoiseLevelSchedule(num_steps=4), callback=lambda k, s, x: seen.append(s))
    assert len(seen) == 4 and seen[-1] == 0


def test_edm_works_with_torch():
    import torch

    x = torch.randn(2, 4, 3, 3)
    out = edm.apply_denoiser(lambda x, c, cond: torch.zeros_like(x), x, 0.5)
    assert torch.allclose(out, 0.5 * x)
