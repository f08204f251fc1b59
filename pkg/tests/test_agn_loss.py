from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tryonvid import agn_loss
from tryonvid.agn_loss import (
    TokenRegionPartition,
    extract_attention_probs,
    grad_loss_agn,
    grad_loss_agn_init,
    loss_agn,
    loss_agn_init,
    loss_total,
    mask_to_partition,
    negative_ratio,
)
from tryonvid.errors import ConfigurationError, DegenerateMaskError, DimensionError


def example():
    # one frame: tokens 0,1 in-mask with S = 0.7, 0.9; tokens 2,3 outside with 0.2, 0.1
    S = np.array([[0.7, 0.9, 0.2, 0.1]])
    part = TokenRegionPartition(np.array([[True, True, False, False]]), (1, 4))
    return S, part


def random_case(rng, n=3, grid=(8, 6)):
    t = grid[0] * grid[1]
    S = rng.random((n, t))
    A = rng.random((n, t)) < 0.3
    A[np.arange(n), rng.integers(t, size=n)] = True
    return S, TokenRegionPartition(A, grid)


def test_hand_examples():
    S, part = example()
    assert loss_agn_init(S, part, 0.01) == pytest.approx(0.1005, abs=1e-12)
    assert loss_agn_init(S, part, 0.02) == pytest.approx(0.101, abs=1e-12)
    assert loss_agn(S, part, 0.01) == pytest.approx(0.0105, abs=1e-12)


def test_exact_optimum():
    part = TokenRegionPartition(np.array([[True, True, False, False]]), (1, 4))
    assert loss_agn_init(np.array([[1.0, 1.0, 0.0, 0.0]]), part) == 0.0
    assert loss_agn(np.array([[0.3, 1.0, 0.0, 0.0]]), part) == 0.0
    assert loss_agn_init(np.array([[0.3, 1.0, 0.0, 0.0]]), part) > 0.0


def test_gradient_hand_example():
    S, part = example()
    g = grad_loss_agn(S, part, 0.01)
    assert np.allclose(g, [[0.0, -0.2, 0.004, 0.002]], atol=1e-15)
    z = grad_loss_agn(np.array([[1.0, 1.0, 0.0, 0.0]]), part, 0.01)
    assert np.all(z == 0)


def test_argmax_tie_breaks_to_lowest_index():
    part = TokenRegionPartition(np.array([[False, True, True, True]]), (1, 4))
    g = grad_loss_agn(np.array([[0.9, 0.5, 0.5, 0.2]]), part, 0.01)
    assert g[0, 1] == pytest.approx(-1.0) and g[0, 2] == 0.0


def test_degenerate_mask():
    part = TokenRegionPartition(np.array([[True, False], [False, False]]), (1, 2))
    with pytest.raises(DegenerateMaskError):
        loss_agn(np.zeros((2, 2)), part)
    # the frame without in-mask tokens can be skipped explicitly
    assert loss_agn(np.array([[0.5, 0.0], [0.3, 0.3]]), part, skip_empty=True) == pytest.approx(0.25)
    g = grad_loss_agn(np.array([[0.5, 0.0], [0.3, 0.3]]), part, skip_empty=True)
    assert np.all(g[1] == 0)
    with pytest.raises(DegenerateMaskError):
        mask_to_partition(np.zeros((2, 8, 8)), (4, 4))


def test_shape_mismatch():
    S, part = example()
    with pytest.raises(DimensionError):
        loss_agn(S[:, :3], part)


def test_loss_total():
    assert loss_total(1.0, 0.0105, 0.5) == pytest.approx(1.00525, abs=1e-15)
    assert loss_total(0.7, 3.0, 0.0) == 0.7
    assert loss_total(0.0, 0.0) == 0.0


def _central_fd(f, S, h=1e-5):
    g = np.zeros_like(S)
    for idx in np.ndindex(S.shape):
        up, dn = S.copy(), S.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (f(up) - f(dn)) / (2 * h)
    return g


def test_gradient_matches_finite_differences(rng):
    S, part = random_case(rng, n=2, grid=(4, 3))
    for fn, gfn in [(loss_agn, grad_loss_agn), (loss_agn_init, grad_loss_agn_init)]:
        fd = _central_fd(lambda s: fn(s, part, 0.01), S)
        g = gfn(S, part, 0.01)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


def test_kernel_backends_agree(rng):
    from tryonvid import _kernels_py, kernels

    for _ in range(20):
        S, part = random_case(rng)
        for refined in (True, False):
            a = kernels.agn_loss_grad(S, part.in_mask, 0.03, refined)
            b = _kernels_py.agn_loss_grad(S, part.in_mask, 0.03, refined)
            assert a[0] == pytest.approx(b[0], rel=1e-13)
            assert np.allclose(a[1], b[1], rtol=0, atol=1e-15)


maps = st.integers(0, 2**32 - 1).map(lambda s: random_case(np.random.default_rng(s), n=2, grid=(3, 4)))


@settings(max_examples=200, deadline=None)
@given(case=maps, lam=st.floats(0, 1))
def test_refined_below_initial(case, lam):
    S, part = case
    assert loss_agn(S, part, lam) <= loss_agn_init(S, part, lam) + 1e-12


@settings(max_examples=100, deadline=None)
@given(case=maps, delta=st.floats(0.0, 0.2), seed=st.integers(0, 1000))
def test_monotone_in_region(case, delta, seed):
    S, part = case
    r = np.random.default_rng(seed)
    i, a = r.integers(S.shape[0]), r.integers(S.shape[1])
    up = S.copy()
    up[i, a] = min(1.0, S[i, a] + delta)
    for fn in (loss_agn, loss_agn_init):
        if part.in_mask[i, a]:
            assert fn(up, part) <= fn(S, part) + 1e-12
        else:
            assert fn(up, part) >= fn(S, part) - 1e-12


@settings(max_examples=100, deadline=None)
@given(case=maps, seed=st.integers(0, 1000))
def test_region_preserving_permutation_invariance(case, seed):
    S, part = case
    r = np.random.default_rng(seed)
    perm_S = S.copy()
    for i in range(S.shape[0]):
        for region in (np.flatnonzero(part.in_mask[i]), np.flatnonzero(~part.in_mask[i])):
            perm_S[i, region] = S[i, r.permutation(region)]
    for fn in (loss_agn, loss_agn_init):
        assert fn(perm_S, part) == pytest.approx(fn(S, part), rel=1e-12)


def _brute_coverage(mask, grid):
    # per-token pixel counting with explicit loops
    n, H, W = mask.shape
    ht, wt = grid
    out = np.zeros((n, ht, wt))
    for f in range(n):
        for ty in range(ht):
            for tx in range(wt):
                y0, y1 = ty * H / ht, (ty + 1) * H / ht
                x0, x1 = tx * W / wt, (tx + 1) * W / wt
                acc = 0.0
                for y in range(H):
                    oy = max(0.0, min(y + 1, y1) - max(y, y0))
                    if oy == 0:
                        continue
                    for x in range(W):
                        ox = max(0.0, min(x + 1, x1) - max(x, x0))
                        acc += oy * ox * mask[f, y, x]
                out[f, ty, tx] = acc / ((y1 - y0) * (x1 - x0))
    return out


def test_partition_full_mask():
    part = mask_to_partition(np.ones((2, 16, 12)), (4, 3))
    assert part.in_mask.all()
    assert np.all(negative_ratio(part) == 0)


def test_partition_upper_half_19x12():
    mask = np.zeros((1, 512, 384))
    mask[0, :256] = 1
    part = mask_to_partition(mask, (19, 12))
    assert part.num_tokens == 228
    # exact rational coverage of each token row by the top 256 pixel rows
    cell = Fraction(512, 19)
    expected = 0
    for ty in range(19):
        lo, hi = ty * cell, (ty + 1) * cell
        covered = max(Fraction(0), min(hi, Fraction(256)) - lo)
        if covered / cell > Fraction(1, 2):
            expected += 12
    assert int(part.in_mask.sum()) == expected


def test_partition_brute_force_random(rng):
    for grid in [(4, 3), (5, 7), (3, 3)]:
        mask = (rng.random((2, 12, 9)) > 0.6).astype(float)
        mask[:, :6, :5] = 1
        ours = agn_loss.token_coverage(mask, grid)
        assert np.allclose(ours, _brute_coverage(mask, grid), atol=1e-12)


def test_partition_threshold_strict():
    mask = np.zeros((1, 4, 4))
    mask[0, :2, :1] = 1  # token (0,0) of a 2x2 grid exactly half covered
    mask[0, 2:, 2:] = 1
    part = mask_to_partition(mask, (2, 2))
    assert part.in_mask[0].tolist() == [False, False, False, True]


def test_negative_ratio():
    A = np.zeros((1, 228), dtype=bool)
    A[0, :107] = True
    assert negative_ratio(TokenRegionPartition(A, (19, 12)))[0] == 121
    half = TokenRegionPartition(np.array([[True, True, False, False]]), (2, 2))
    assert negative_ratio(half)[0] == 2


def test_extract_attention_probs():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(5), size=(2, 1, 6))  # N=2, 1 head, 6 queries, 5 keys
    S = extract_attention_probs(w, slice(4, 5))
    assert np.allclose(S, w[:, 0, :, 4])
    two = np.concatenate([w, w], axis=1)
    assert np.allclose(extract_attention_probs(two, slice(4, 5)), S)
    q = np.zeros((1, 1, 1, 4))
    q[0, 0, 0] = [0.1, 0.2, 0.2, 0.5]
    assert extract_attention_probs(q, slice(2, 4))[0, 0] == pytest.approx(0.5)
    layered = extract_attention_probs([q, q * 0 + 0.25], slice(2, 4))
    assert layered[0, 0] == pytest.approx((0.5 + 0.25) / 2)
    with pytest.raises(ConfigurationError):
        extract_attention_probs(w, slice(5, 5))


def test_loss_config_presets():
    assert agn_loss.LossConfig().lambda_N == 0.01
    assert agn_loss.LossConfig().lambda_agn == 0.5
    assert agn_loss.LossConfig.ablation().lambda_N == 0.1
    with pytest.raises(ValueError):
        agn_loss.LossConfig(lambda_N=-1)
