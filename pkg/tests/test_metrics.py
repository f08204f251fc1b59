import numpy as np
import pytest
from skimage.metrics import structural_similarity

from tryonvid.errors import DimensionError
from tryonvid.metrics import (
    MetricReport,
    available_metrics,
    clip_ssim,
    evaluate_clips,
    flicker_score,
    perceptual_metric_interface,
    register_metric,
    ssim,
    to_gray,
    unregister_metric,
)


def test_ssim_identity_and_symmetry(rng):
    x = rng.random((24, 20, 3))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    assert ssim(x, x) == 1.0
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)
    assert ssim(x, y) < 1.0


def test_ssim_constant_frames():
    c1 = 1e-4
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(c1 / (1 + c1), rel=1e-9)


def test_ssim_matches_scikit_image(rng):
    for _ in range(5):
        x = rng.random((32, 24, 3))
        y = np.clip(x + rng.normal(0, 0.2, x.shape), 0, 1)
        ref = structural_similarity(
            to_gray(x), to_gray(y), gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0
        )
        assert ssim(x, y) == pytest.approx(ref, abs=1e-12)


def test_ssim_shape_mismatch():
    with pytest.raises(DimensionError):
        ssim(np.zeros((8, 8)), np.zeros((8, 9)))


def test_clip_ssim(rng):
    a = rng.random((3, 16, 16, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert clip_ssim(a, a) == 1.0
    assert clip_ssim(a[:1], b[:1]) == ssim(a[0], b[0])
    assert clip_ssim(a, b) == pytest.approx(np.mean([ssim(a[t], b[t]) for t in range(3)]))
    with pytest.raises(DimensionError):
        clip_ssim(a, b[:2])


def test_flicker(rng):
    a = rng.random((4, 8, 8, 3))
    assert flicker_score(a, a) == 0
    static_a = np.repeat(a[:1], 4, axis=0)
    static_b = np.repeat(rng.random((1, 8, 8, 3)), 4, axis=0)
    assert flicker_score(static_a, static_b) == 0
    # two frames: gen steps by +0.2, ref steps by +0.1 everywhere -> (0.1)^2
    g = np.stack([np.zeros((2, 2, 3)), np.full((2, 2, 3), 0.2)])
    r = np.stack([np.zeros((2, 2, 3)), np.full((2, 2, 3), 0.1)])
    assert flicker_score(g, r) == pytest.approx(0.01)
    assert flicker_score(a + 0.3, a[::-1] + 0.3) == pytest.approx(flicker_score(a, a[::-1]))
    with pytest.raises(ValueError):
        flicker_score(a[:1], a[:1])


def test_registry():
    assert perceptual_metric_interface("ssim")
    lp = perceptual_metric_interface("lpips")
    assert not lp
    with pytest.raises(RuntimeError):
        lp(None, None)
    register_metric("lpips", lambda g, r: 0.123)
    try:
        assert perceptual_metric_interface("LPIPS")(None, None) == 0.123
        assert "lpips" in available_metrics()
    finally:
        unregister_metric("lpips")
    assert not perceptual_metric_interface("lpips")


def test_evaluate_and_report(rng):
    a = rng.random((3, 16, 16, 3))
    vals = evaluate_clips(a, a, ["ssim", "flicker", "vfid"])
    assert vals == {"ssim": 1.0, "flicker": 0.0}
    rep = MetricReport(metadata={"seed": 1})
    rep.add("a", {"ssim": 0.5})
    rep.add("b", {"ssim": 1.0, "flicker": 0.2})
    assert rep.aggregate == {"flicker": 0.2, "ssim": 0.75}
