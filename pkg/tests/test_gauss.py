import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mirecon.errors import ContractError, NumericError
from mirecon.gauss import (ModifiedIndicatorParams, discrete_gauss_field, discrete_gauss_indicator, estimate_areas,
                           kernel_derivative, modified_indicator)
from mirecon.geometry import OrientedPointSet, icosphere, sample_surface


def unit_sphere_samples(n, seed=0):
    """Points exactly on the unit sphere, outward normals, exact areas 4 pi / n."""
    p = np.random.default_rng(seed).normal(size=(n, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return OrientedPointSet(p, p.copy(), np.full(n, 4 * np.pi / n))


def test_kernel_examples():
    assert kernel_derivative([0, 0, 2], [0, 0, 0], [0, 0, 1]) == pytest.approx(-1 / (16 * np.pi), rel=1e-15)
    assert kernel_derivative([0, 0, 2], [0, 0, 0], [1, 0, 0]) == 0.0
    with pytest.raises(NumericError):
        kernel_derivative([0, 0, 0], [0, 0, 0], [0, 0, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(0.1, 10))
def test_kernel_homogeneity(v, t):
    v = np.array(v)
    if np.linalg.norm(v) < 1e-3:
        return
    n = np.array([0.6, 0.0, 0.8])
    a = kernel_derivative(v, np.zeros(3), n)
    b = kernel_derivative(t * v, np.zeros(3), n)
    assert b == pytest.approx(a / t**2, rel=1e-12, abs=1e-300)


def test_sphere_center_is_one():
    s = unit_sphere_samples(5000)
    assert abs(discrete_gauss_indicator(s, [0, 0, 0]) - 1.0) < 1e-9


def test_far_point_is_zero():
    s = unit_sphere_samples(10_000)
    # independent brute-force sum, written out per term
    x = np.array([10.0, 0, 0])
    ref = math.fsum(kernel_derivative(x, y, n) * a for y, n, a in zip(s.positions, s.normals, s.areas))
    v = discrete_gauss_indicator(s, x)
    assert abs(v) < 1e-3
    assert v == pytest.approx(ref, abs=1e-15)


def test_flipped_normals_negate():
    s = unit_sphere_samples(3000)
    f = OrientedPointSet(s.positions, -s.normals, s.areas)
    assert discrete_gauss_indicator(f, [0, 0, 0]) == pytest.approx(-1.0, abs=1e-9)


def test_permutation_invariance():
    s = sample_surface(icosphere(3), 4000, seed=2)
    x = np.array([[0.1, 0.2, -0.3], [0.9, 0.1, 0.2], [2.0, 1.0, 0.0]])
    a = discrete_gauss_indicator(s, x)
    perm = np.random.default_rng(9).permutation(len(s))
    b = discrete_gauss_indicator(s.subset(perm), x)
    assert np.abs(a - b).max() <= 1e-12
    # correctly rounded sums are in fact identical
    assert a.tobytes() == b.tobytes()


def test_fast_field_matches_compensated(rng):
    s = sample_surface(icosphere(3), 3000, seed=1)
    x = rng.normal(size=(300, 3))
    np.testing.assert_allclose(discrete_gauss_field(s)(x), discrete_gauss_indicator(s, x), rtol=0, atol=1e-9)


def test_clamp_keeps_finite():
    s = unit_sphere_samples(100)
    v = discrete_gauss_indicator(s, s.positions[:5])
    assert np.isfinite(v).all()


def test_missing_normals_contract():
    with pytest.raises(ContractError):
        discrete_gauss_indicator(OrientedPointSet(np.zeros((3, 3))), [1, 1, 1])


def test_estimate_areas_sum(sphere):
    s = sample_surface(sphere, 20_000, seed=4)
    total = estimate_areas(s.positions).sum()
    assert total == pytest.approx(sphere.area(), rel=0.05)


def test_modified_indicator_examples():
    p = ModifiedIndicatorParams()
    w = p.w
    assert w == 4 / 256
    assert modified_indicator(0.0, p) == 0.5
    assert modified_indicator(w, p) == 1.0
    assert modified_indicator(-w, p) == 0.0
    assert modified_indicator(w / 2, p) == 0.75
    assert modified_indicator(10.0, p) == 1.0 and modified_indicator(-10.0, p) == 0.0


def test_params_validation():
    with pytest.raises(ContractError):
        ModifiedIndicatorParams(grid_size=0.0)
    assert ModifiedIndicatorParams(grid_size=0.01, w=0.2).w == 0.2


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_modified_indicator_monotone(a, b):
    p = ModifiedIndicatorParams(grid_size=0.05)
    lo, hi = sorted((a, b))
    assert 0.0 <= modified_indicator(lo, p) <= modified_indicator(hi, p) <= 1.0
