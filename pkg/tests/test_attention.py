import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tryonvid.attention import (
    FrameFeatureBank,
    FrameSelectionPolicy,
    attend_frame,
    build_kv_crossframe_baseline,
    build_kv_ctc,
    build_kv_reference,
    kv_for_frame,
    scaled_dot_attention,
    select_frame_j,
    softmax,
)
from tryonvid.errors import ConfigurationError, DimensionError, PolicyViolationError


def bank(rng, n=5, L=4, Lc=2, d=8):
    return FrameFeatureBank(rng.standard_normal((n, L, d)), rng.standard_normal((Lc, d)))


def test_single_key_returns_value(rng):
    Q = rng.standard_normal((3, 4))
    V = rng.standard_normal((1, 4))
    out = scaled_dot_attention(Q, rng.standard_normal((1, 4)), V)
    assert np.allclose(out, np.repeat(V, 3, axis=0))


def test_zero_query_gives_mean(rng):
    K, V = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    out = scaled_dot_attention(np.zeros((2, 4)), K, V, head_count=2)
    assert np.allclose(out, V.mean(axis=0))


def test_hand_example_d1():
    out = scaled_dot_attention(np.array([[math.log(3)]]), np.array([[1.0], [0.0]]), np.array([[4.0], [0.0]]))
    assert out[0, 0] == pytest.approx(3.0, abs=1e-9)


def test_dimension_errors(rng):
    with pytest.raises(DimensionError):
        scaled_dot_attention(np.zeros((2, 4)), np.zeros((3, 5)), np.zeros((3, 5)))
    with pytest.raises(DimensionError):
        scaled_dot_attention(np.zeros((2, 6)), np.zeros((3, 6)), np.zeros((3, 6)), head_count=4)


def test_multihead_equals_per_head_loop(rng):
    Q, K, V = (rng.standard_normal((5, 8)) for _ in range(3))
    out = scaled_dot_attention(Q, K, V, head_count=2)
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        assert np.allclose(out[:, sl], scaled_dot_attention(Q[:, sl], K[:, sl], V[:, sl]))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), lk=st.integers(1, 9), heads=st.sampled_from([1, 2, 4]))
def test_attention_properties(seed, lk, heads):
    r = np.random.default_rng(seed)
    Q = r.standard_normal((3, 8)) * 3
    K = r.standard_normal((lk, 8)) * 3
    V = r.standard_normal((lk, 8))
    out, w = scaled_dot_attention(Q, K, V, heads, return_weights=True)
    assert np.allclose(w.sum(-1), 1.0, atol=1e-6)
    assert np.all(out >= V.min(axis=0) - 1e-12) and np.all(out <= V.max(axis=0) + 1e-12)
    p = r.permutation(lk)
    assert np.allclose(scaled_dot_attention(Q, K[p], V[p], heads), out, atol=1e-6, rtol=0)


def test_softmax_stable():
    s = softmax(np.array([[1000.0, 0.0]]))
    assert np.isfinite(s).all() and s[0, 0] == pytest.approx(1.0)


def test_reference_concat(rng):
    b = bank(rng)
    kv = build_kv_reference(b, 2)
    assert kv.shape[0] == 6
    assert np.array_equal(kv[:4], b.blocks[2]) and np.array_equal(kv[4:], b.garment)
    with pytest.raises(ConfigurationError):
        build_kv_reference(FrameFeatureBank(b.blocks), 0)
    with pytest.raises(ConfigurationError):
        build_kv_reference(FrameFeatureBank(b.blocks, np.zeros((0, 8))), 0)


def test_crossframe_baseline(rng):
    b = bank(rng)
    for i, (a, c) in {0: (0, 0), 1: (0, 0), 3: (0, 2)}.items():
        kv = build_kv_crossframe_baseline(b, i)
        assert kv.shape[0] == 8
        assert np.array_equal(kv[:4], b.blocks[a]) and np.array_equal(kv[4:], b.blocks[c])


def test_ctc_concat(rng):
    b = bank(rng)
    kv = build_kv_ctc(b, 3, 1)
    assert kv.shape[0] == 10
    assert np.array_equal(kv[:4], b.blocks[3])
    assert np.array_equal(kv[4:8], b.blocks[1])
    assert np.array_equal(kv[8:], b.garment)
    same = build_kv_ctc(b, 2, 2)
    assert np.array_equal(same[:4], same[4:8])
    with pytest.raises(PolicyViolationError):
        build_kv_ctc(b, 3, 2)


def test_ctc_builder_matches_direct_concat(rng):
    b = bank(rng)
    Q = rng.standard_normal((4, 8))
    direct = np.concatenate([b.blocks[2], b.blocks[2], b.garment])
    ref = scaled_dot_attention(Q, direct, direct, 2)
    policy = FrameSelectionPolicy("fixed_zero")
    assert np.allclose(scaled_dot_attention(Q, build_kv_ctc(b, 2, 2), build_kv_ctc(b, 2, 2), 2), ref)
    assert attend_frame(b, Q, 2, policy, 2).shape == (4, 8)


def test_deterministic_selection_examples():
    p = FrameSelectionPolicy("infer_deterministic")
    assert select_frame_j(p, 2, 16) == 10
    assert select_frame_j(p, 12, 16) == 4
    assert select_frame_j(p, 0, 1) == 0
    # small i looks ahead, large i looks back
    for n in (4, 8, 16):
        for i in range(n):
            j = select_frame_j(p, i, n)
            assert j != i - 1
            assert j == select_frame_j(p, i, n)


def test_deterministic_steps_past_predecessor():
    p = FrameSelectionPolicy("infer_deterministic")
    # n=2, i=1: half offset lands on 0 == i-1, moves on to 1
    assert select_frame_j(p, 1, 2) == 1


def test_random_selection_never_predecessor():
    p = FrameSelectionPolicy("train_random", rng_seed=3)
    rng = np.random.default_rng(3)
    draws = [select_frame_j(p, 5, 8, rng) for _ in range(10_000)]
    assert 4 not in draws
    assert set(draws) == {0, 1, 2, 3, 5, 6, 7}
    counts = np.bincount(draws, minlength=8)
    assert counts[[0, 1, 2, 3, 5, 6, 7]].min() > 1200


def test_ablation_modes(rng):
    b = bank(rng)
    assert select_frame_j(FrameSelectionPolicy("fixed_zero"), 1, 5) == 0
    kv = kv_for_frame(b, 1, FrameSelectionPolicy("fixed_zero"))
    assert np.array_equal(kv[4:8], b.blocks[0])
    kv = kv_for_frame(b, 3, FrameSelectionPolicy("crossframe_baseline"))
    assert np.array_equal(kv[:4], b.blocks[0]) and np.array_equal(kv[4:8], b.blocks[2])
    assert kv_for_frame(b, 3, None).shape[0] == 6
    with pytest.raises(ValueError):
        FrameSelectionPolicy("sometimes")
