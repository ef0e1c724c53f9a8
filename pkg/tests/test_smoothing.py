import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didrivers.errors import BandwidthDegenerate
from didrivers.smoothing import cv_bandwidth, local_linear, loo_residuals, \
    rule_of_thumb_bandwidth

finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(a=finite, b=finite, seed=st.integers(0, 2**31 - 1), h=st.floats(0.3, 5.0))
def test_affine_reproduction_1d(a, b, seed, h):
    rng = np.random.default_rng(seed)
    D = rng.uniform(0, 10, 40)
    w = rng.exponential(size=40)
    pts = np.linspace(1, 9, 25)
    got = local_linear(D, a + b * D, pts, h, w)
    np.testing.assert_allclose(got, a + b * pts, rtol=1e-9, atol=1e-9 * (1 + abs(a) + abs(b)))


@settings(max_examples=40, deadline=None)
@given(a=finite, b1=finite, b2=finite, seed=st.integers(0, 2**31 - 1))
def test_affine_reproduction_2d(a, b1, b2, seed):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(60, 2)) * [1.0, 3.0]
    pts = np.column_stack([np.linspace(-1, 1, 9), np.linspace(-2, 2, 9)])
    got = local_linear(D, a + D @ [b1, b2], pts, [0.5, 1.5])
    np.testing.assert_allclose(got, a + pts @ [b1, b2], rtol=1e-9,
                               atol=1e-9 * (1 + abs(a) + abs(b1) + abs(b2)))


def test_constant_is_flat():
    D = np.linspace(0, 1, 30)
    np.testing.assert_allclose(local_linear(D, np.full(30, 7.0), D, 0.2), 7.0, rtol=1e-12)


def test_rule_of_thumb():
    D = np.arange(32, dtype=float)
    assert rule_of_thumb_bandwidth(D)[0] == pytest.approx(1.06 * D.std() * 32 ** -0.2)
    with pytest.raises(BandwidthDegenerate):
        rule_of_thumb_bandwidth(np.ones(10))


def test_weights_match_replication():
    rng = np.random.default_rng(0)
    D = rng.uniform(0, 5, 20)
    y = np.sin(D) + rng.normal(0, 0.1, 20)
    w = rng.integers(1, 4, 20).astype(float)
    pts = np.linspace(0.5, 4.5, 7)
    rep = np.repeat(np.arange(20), w.astype(int))
    np.testing.assert_allclose(local_linear(D, y, pts, 0.7, w),
                               local_linear(D[rep], y[rep], pts, 0.7), rtol=1e-10)


def test_loo_residual_definition():
    rng = np.random.default_rng(1)
    D = rng.uniform(0, 5, 25)
    y = D ** 2 + rng.normal(size=25)
    res = loo_residuals(D, y, 0.8)
    k = 7
    keep = np.arange(25) != k
    assert res[k] == pytest.approx(y[k] - local_linear(D[keep], y[keep], D[k:k + 1], 0.8)[0])


def test_cv_prefers_smaller_bandwidth_for_wiggly_truth():
    rng = np.random.default_rng(2)
    D = np.sort(rng.uniform(0, 10, 300))
    y = np.sin(3 * D) + rng.normal(0, 0.1, 300)
    assert cv_bandwidth(D, y)[0] < rule_of_thumb_bandwidth(D)[0]
