import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from link_avvp import numerics as nx
from link_avvp.attention import apply_tsam, hidden_size, init_tsam, spatial_attention, temporal_attention
from link_avvp.numerics import Tensor


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def temporal_oracle(f, p):
    T, d = f.shape
    w1, b1, w2, b2 = (getattr(p, n).data for n in ("temporal_w1", "temporal_b1", "temporal_w2", "temporal_b2"))
    h = w1.shape[1]

    def mlp(x):
        hid = [max(0.0, sum(x[t] * w1[t, j] for t in range(T)) + b1[j]) for j in range(h)]
        return [sum(hid[j] * w2[j, t] for j in range(h)) + b2[t] for t in range(T)]

    avg = [sum(f[t]) / d for t in range(T)]
    mx = [max(f[t]) for t in range(T)]
    a, m = mlp(avg), mlp(mx)
    return np.array([sig(a[t] + m[t]) for t in range(T)])


def spatial_oracle(f, p):
    T, d = f.shape
    w, b = p.spatial_w.data, p.spatial_b.data
    pooled = [sum(f[t, k] for t in range(T)) / T for k in range(d)] + [max(f[t, k] for t in range(T)) for k in range(d)]
    return np.array([sig(sum(pooled[i] * w[i, k] for i in range(2 * d)) + b[k]) for k in range(d)])


@pytest.fixture
def params(rng):
    return init_tsam(6, 5, rng, "tsam.audio")


def zero_out(p):
    for name in vars(p):
        getattr(p, name).data = np.zeros(getattr(p, name).shape)


def test_zero_weights_give_half(params, rng):
    zero_out(params)
    f = Tensor(rng.standard_normal((6, 5)))
    np.testing.assert_array_equal(temporal_attention(f, params).data, 0.5)
    np.testing.assert_array_equal(spatial_attention(f, params).data, 0.5)


def test_temporal_matches_scalar_oracle(params, rng):
    f = rng.standard_normal((6, 5))
    np.testing.assert_allclose(temporal_attention(Tensor(f), params).data, temporal_oracle(f, params), atol=1e-12)


def test_spatial_matches_scalar_oracle(params, rng):
    f = rng.standard_normal((6, 5))
    np.testing.assert_allclose(spatial_attention(Tensor(f), params).data, spatial_oracle(f, params), atol=1e-12)


def test_apply_tsam_matches_loop_oracle(params, rng):
    f = rng.standard_normal((6, 5))
    W = temporal_oracle(f, params)
    refined = np.array([[W[t] * f[t, k] for k in range(5)] for t in range(6)])
    S = spatial_oracle(refined, params)
    expected = np.array([[W[t] * S[k] * f[t, k] for k in range(5)] for t in range(6)])
    np.testing.assert_allclose(apply_tsam(Tensor(f), params).data, expected, atol=1e-12)


def test_batched_equals_per_video(params, rng):
    f = rng.standard_normal((3, 6, 5))
    batched = apply_tsam(Tensor(f), params).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], apply_tsam(Tensor(f[i]), params).data, atol=1e-14)


def test_single_segment_pools_coincide(rng):
    p = init_tsam(1, 4, rng, "x")
    f = rng.standard_normal((1, 4))
    # avg and max over one segment both equal that segment
    expected = 1 / (1 + np.exp(-(np.concatenate([f[0], f[0]]) @ p.spatial_w.data + p.spatial_b.data)))
    np.testing.assert_allclose(spatial_attention(Tensor(f), p).data, expected, atol=1e-14)


def test_unit_weights_are_identity(params, rng):
    zero_out(params)
    params.temporal_b2.data = np.full(6, 400.0)   # sigmoid(800) == 1.0 in float64
    params.spatial_b.data = np.full(5, 800.0)
    f = rng.standard_normal((6, 5))
    np.testing.assert_array_equal(apply_tsam(Tensor(f), params).data, f)


def test_zero_temporal_weights_annihilate(params, rng):
    zero_out(params)
    params.temporal_b2.data = np.full(6, -400.0)
    out = apply_tsam(Tensor(rng.standard_normal((6, 5))), params).data
    assert np.all(np.abs(out) == 0.0)


def test_identical_segments_get_identical_weights_under_equivariant_mlp(rng):
    # the segment MLP is only permutation-equivariant if its matrices are of the form a*I + b*J
    T = 4
    p = init_tsam(T, 3, rng, "x", hidden=T)
    p.temporal_w1.data = 0.7 * np.eye(T) + 0.2
    p.temporal_w2.data = -0.4 * np.eye(T) + 0.1
    p.temporal_b1.data = np.full(T, 0.3)
    p.temporal_b2.data = np.full(T, -0.1)
    f = rng.standard_normal((T, 3))
    f[2] = f[0]
    W = temporal_attention(Tensor(f), p).data
    assert W[0] == W[2]
    perm = np.array([3, 1, 0, 2])
    np.testing.assert_allclose(temporal_attention(Tensor(f[perm]), p).data, W[perm], atol=1e-14)


def test_spatial_weights_are_segment_permutation_invariant(params, rng):
    f = rng.standard_normal((6, 5))
    perm = rng.permutation(6)
    np.testing.assert_allclose(spatial_attention(Tensor(f[perm]), params).data,
                               spatial_attention(Tensor(f), params).data, atol=1e-14)


def test_hidden_size_rule():
    assert hidden_size(10, 2) == 5
    assert hidden_size(3, 4) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weights_strictly_inside_unit_interval_and_contraction(seed):
    rng = np.random.default_rng(seed)
    p = init_tsam(5, 4, rng, "x")
    f = Tensor(rng.standard_normal((5, 4)) * 3)
    W = temporal_attention(f, p).data
    S = spatial_attention(f, p).data
    assert np.all((W > 0) & (W < 1)) and np.all((S > 0) & (S < 1))
    assert np.all(np.abs(apply_tsam(f, p).data) <= np.abs(f.data))


def test_gradients_through_both_paths(params, rng):
    f = nx.Parameter(rng.standard_normal((2, 6, 5)), "f")
    probe = Tensor(rng.standard_normal((2, 6, 5)))
    ps = [getattr(params, n) for n in vars(params)] + [f]
    assert nx.grad_check(lambda: nx.sum_all(nx.mul(apply_tsam(f, params), probe)), ps) < 1e-6


def test_shape_mismatch(params):
    with pytest.raises(nx.ShapeError):
        temporal_attention(Tensor(np.zeros((5, 5))), params)
