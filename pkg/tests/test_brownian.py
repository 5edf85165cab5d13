import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathsplit.brownian import (DyadicBrownianTree, StepIncrement, dump_increments, load_increments,
                                merge, merge_pairs, refine, sample_conditional_swing_gap,
                                sample_increment, sgn, stream_for)
from pathsplit.errors import ConfigurationError, DomainError
from pathsplit.verify import brownian_functionals


def inc1(h, w, hst, n=1.0, gap=None, k=None):
    arr = lambda x: None if x is None else np.array([float(x)])
    return StepIncrement(h, arr(w), arr(hst), arr(n), arr(gap), arr(k))


def test_sgn_zero_is_plus_one():
    assert sgn(0.0) == 1.0
    assert sgn(-0.0) == 1.0
    np.testing.assert_array_equal(sgn(np.array([-2.0, 0.0, 3.0])), [-1.0, 1.0, 1.0])


def test_sample_shapes_and_swing_values():
    inc = sample_increment(stream_for(1, 0, 0, 0), 0.5, d=3, with_k=True, size=(7, 2))
    assert inc.shape == (7, 2, 3)
    assert inc.k.shape == (7, 2, 3)
    assert set(np.unique(inc.n)) <= {-1.0, 1.0}
    np.testing.assert_array_equal(inc.n, sgn(inc.gap))


@pytest.mark.parametrize("h", [0.0, -1.0, float("nan")])
def test_nonpositive_h_rejected(h):
    with pytest.raises(DomainError):
        sample_increment(stream_for(0, 0, 0, 0), h)


def test_marginal_moments():
    n = 1_000_000
    inc = sample_increment(stream_for(7, 0, 0, 0), 1.0, with_k=True, size=n)
    w, hst, k, sw = (a.ravel() for a in (inc.w, inc.hst, inc.k, inc.n))
    assert abs(np.var(w) - 1.0) <= 0.01
    assert abs(np.var(hst) - 1 / 12) <= 0.001
    assert abs(np.var(k) - 1 / 720) <= 1e-4
    assert abs(np.corrcoef(w, hst)[0, 1]) <= 0.004
    assert abs(np.mean(sw > 0) - 0.5) <= 4 * 0.5 / math.sqrt(n)
    kp, km = k[sw > 0], k[sw < 0]
    se = math.sqrt(kp.var() / kp.size + km.var() / km.size)
    assert abs(kp.mean() - km.mean() - 2 / (8 * math.sqrt(6 * math.pi))) <= 4 * se


def test_k_scales_with_sqrt_h():
    inc = sample_increment(stream_for(3, 0, 0, 0), 4.0, with_k=True, size=400_000)
    kn = (inc.k * inc.n).ravel()
    target = 2.0 / (8 * math.sqrt(6 * math.pi))
    assert abs(kn.mean() - target) <= 4 * kn.std() / math.sqrt(kn.size)


def test_conditional_swing_gap():
    rng = stream_for(2, 0, 0, 0)
    n = np.where(rng.random(400_000) < 0.5, -1.0, 1.0)
    g = sample_conditional_swing_gap(rng, n, 1.0)
    np.testing.assert_array_equal(sgn(g), n)
    pos = g[n > 0]
    assert abs(pos.mean() - math.sqrt(1 / (6 * math.pi))) <= 4 * pos.std() / math.sqrt(pos.size)
    sq = g * g
    assert abs(sq.mean() - 1 / 12) <= 4 * sq.std() / math.sqrt(sq.size)
    with pytest.raises(DomainError):
        sample_conditional_swing_gap(rng, np.array([0.5]), 1.0)


def test_refine_zero_parent():
    class Zero:
        def standard_normal(self, shape):
            return np.zeros(shape)

    left, right = refine(inc1(1.0, 0.0, 0.0, 1.0, gap=0.0), Zero())
    for c in (left, right):
        assert c.h == 0.5
        assert c.w[0] == 0.0 and c.hst[0] == 0.0


def test_merge_examples():
    m = merge(inc1(1.0, 0.0, 0.0), inc1(1.0, 0.0, 0.0))
    assert m.h == 2.0 and m.w[0] == 0.0 and m.hst[0] == 0.0
    m = merge(inc1(1.0, 1.0, 0.0), inc1(1.0, -1.0, 0.0))
    assert m.hst[0] == 0.5
    assert m.n[0] == 1.0
    with pytest.raises(DomainError):
        merge(inc1(1.0, 0.0, 0.0), inc1(0.5, 0.0, 0.0))


def test_refine_rejects_k():
    inc = sample_increment(stream_for(0, 0, 0, 0), 1.0, with_k=True)
    with pytest.raises(ConfigurationError):
        refine(inc, stream_for(0, 0, 0, 1))


def test_merge_refine_identity():
    rng = stream_for(11, 0, 0, 0)
    parent = sample_increment(rng, 1.0, d=2, size=10_000)
    left, right = refine(parent, rng)
    back = merge(left, right)
    assert back.h == parent.h
    assert np.max(np.abs(back.w - parent.w)) <= 1e-12
    assert np.max(np.abs(back.hst - parent.hst)) <= 1e-12
    # the parent's swing is reproduced because the merged gap is the stored gap
    np.testing.assert_allclose(back.gap, parent.gap, atol=1e-12)


def test_refined_children_law():
    rng = stream_for(12, 0, 0, 0)
    parent = sample_increment(rng, 1.0, size=300_000)
    left, right = refine(parent, rng)
    for c in (left, right):
        assert abs(np.var(c.w) - 0.5) <= 0.01
        assert abs(np.var(c.hst) - 0.5 / 12) <= 0.001
    assert abs(np.corrcoef(left.w.ravel(), right.w.ravel())[0, 1]) <= 0.01
    assert abs(np.corrcoef(left.w.ravel(), left.hst.ravel())[0, 1]) <= 0.01


def test_refine_without_gap_resamples_conditionally():
    rng = stream_for(13, 0, 0, 0)
    parent = sample_increment(rng, 1.0, size=1000)
    bare = StepIncrement(parent.h, parent.w, parent.hst, parent.n)
    left, right = refine(bare, rng)
    np.testing.assert_array_equal(sgn(left.hst - right.hst), parent.n)


def test_k_merge_identity_against_quadrature():
    # K of [0,1/2], [1/2,1] and [0,1] from one fine path, then merge the halves
    rng = stream_for(21, 0, 0, 0)
    m = 2 ** 14
    dw = rng.standard_normal((1000, m)) * math.sqrt(1.0 / m)
    full = brownian_functionals(dw, 1.0)
    lhs = brownian_functionals(dw[:, : m // 2], 0.5)
    rhs = brownian_functionals(dw[:, m // 2:], 0.5)
    mk = lambda f, h: StepIncrement(h, f["W"][:, None], f["H"][:, None], f["n"][:, None],
                                     f["N"][:, None], f["K"][:, None])
    merged = merge(mk(lhs, 0.5), mk(rhs, 0.5))
    rel = np.abs(merged.k[:, 0] - full["K"]) / np.abs(full["K"]).mean()
    assert rel.max() <= 1e-4
    np.testing.assert_allclose(merged.hst[:, 0], full["H"], atol=1e-10)
    np.testing.assert_array_equal(merged.n[:, 0], full["n"])


def test_k_sampler_against_oracle_moments():
    # joint moments of (K, N) from the sampler vs from discretised paths
    samp = sample_increment(stream_for(5, 0, 0, 0), 1.0, with_k=True, size=200_000)
    rng = stream_for(6, 0, 0, 0)
    dw = rng.standard_normal((20_000, 1024)) * math.sqrt(1.0 / 1024)
    o = brownian_functionals(dw, 1.0)
    for a, b in ((samp.k.ravel() ** 2, o["K"] ** 2), ((samp.k * samp.gap).ravel(), o["K"] * o["N"])):
        se = math.sqrt(a.var() / a.size + b.var() / b.size)
        assert abs(a.mean() - b.mean()) <= 4 * se
    assert abs(np.mean(o["K"] * o["N"]) - 1 / 96) <= 4 * np.std(o["K"] * o["N"]) / math.sqrt(20_000)


def test_stream_determinism_and_independence():
    a = stream_for(5, 0, 0, 0).standard_normal(10)
    b = stream_for(5, 0, 0, 0).standard_normal(10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, stream_for(6, 0, 0, 0).standard_normal(10))
    x = stream_for(5, 0, 0, 0).standard_normal(1_000_000)
    y = stream_for(5, 1, 0, 0).standard_normal(1_000_000)
    assert abs(np.corrcoef(x, y)[0, 1]) <= 4 / math.sqrt(1_000_000)
    with pytest.raises(DomainError):
        stream_for(-1, 0, 0, 0)


def test_dyadic_tree_consistency():
    tree = DyadicBrownianTree.sample(stream_for(3, 0, 0, 0), 1 / 64, 64, 6, d=2, with_k=True, batch=5)
    assert tree.depth == 6
    assert tree.is_consistent()
    top = tree.level(6)
    assert top.shape == (5, 1, 2)
    np.testing.assert_allclose(top.w[:, 0], tree.leaves.w.sum(axis=1), atol=1e-12)
    assert math.isclose(top.h, 1.0)


def test_merge_pairs_axis0():
    leaves = sample_increment(stream_for(1, 0, 0, 0), 0.1, 2, True, size=(8, 3))
    up = merge_pairs(merge_pairs(merge_pairs(leaves, axis=0), axis=0), axis=0)
    assert up.shape == (1, 3, 2)
    np.testing.assert_allclose(up.w[0], leaves.w.sum(axis=0), atol=1e-14)
    with pytest.raises(DomainError):
        merge_pairs(leaves, axis=-1)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 10.0), st.integers(1, 3), st.integers(0, 2 ** 31))
def test_merge_of_scaled_is_scaled_merge(h, d, seed):
    rng = stream_for(seed, 0, 0, 0)
    a = sample_increment(rng, h, d, True)
    b = sample_increment(rng, h, d, True)
    c = 3.0
    m1 = merge(a, b).scaled(c)
    m2 = merge(a.scaled(c), b.scaled(c))
    np.testing.assert_allclose(m1.w, m2.w, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(m1.hst, m2.hst, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(m1.k, m2.k, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_dump_roundtrip(tmp_path, fmt):
    inc = sample_increment(stream_for(2, 0, 0, 0), 0.25, 2, True, size=(3, 4))
    f = tmp_path / ("inc." + fmt)
    dump_increments(f, inc, fmt)
    back = load_increments(f, 2, has_k=True, fmt=fmt, rng=stream_for(2, 0, 0, 1))
    np.testing.assert_array_equal(back.w, inc.w)
    np.testing.assert_array_equal(back.hst, inc.hst)
    np.testing.assert_array_equal(back.k, inc.k)
    np.testing.assert_array_equal(back.n, inc.n)
    np.testing.assert_array_equal(sgn(back.gap), inc.n)
    assert back.h == inc.h
