import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import rotate_expm, scan_largest_root
from ropecloth.geometry import (QuadraticCoeffs, largest_root_in_unit_interval, normalized, rotate_about_axis,
                                rotation_matrix)

finite = st.floats(-10.0, 10.0, allow_nan=False)
vec = st.tuples(finite, finite, finite).map(np.array)
nonzero_vec = vec.filter(lambda v: np.linalg.norm(v) > 1e-3)
angle = st.floats(-2 * math.pi, 2 * math.pi, allow_nan=False)


def test_quarter_turn():
    out = rotate_about_axis(np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), math.pi / 2)
    np.testing.assert_allclose(out, [0.0, 1.0, 0.0], atol=1e-15)


def test_zero_angle_is_identity():
    v = np.array([0.3, -2.0, 7.5])
    assert np.array_equal(rotate_about_axis(v, np.array([0.0, 1.0, 0.0]), 0.0), v)


def test_two_half_turns_equal_full_turn():
    v = np.array([1.0, 2.0, 3.0])
    axis = np.ones(3) / math.sqrt(3.0)
    full = rotate_about_axis(v, axis, 0.7)
    twice = rotate_about_axis(rotate_about_axis(v, axis, 0.35), axis, 0.35)
    np.testing.assert_allclose(full, twice, atol=1e-14)
    # frozen from the matrix-exponential oracle
    np.testing.assert_allclose(full, rotate_expm(v, axis, 0.7), atol=1e-14)
    np.testing.assert_allclose(full, [1.607097067858911, 1.2561214897132016, 3.1367814424278873], atol=1e-13)


def test_non_unit_axis_rejected():
    with pytest.raises(ValueError):
        rotate_about_axis(np.ones(3), np.array([0.0, 0.0, 2.0]), 0.1)


def test_rotation_matrix_matches_vector_form(rng):
    for _ in range(5):
        axis = normalized(rng.normal(size=3))
        v = rng.normal(size=3)
        th = rng.uniform(-3, 3)
        np.testing.assert_allclose(rotation_matrix(axis, th) @ v, rotate_about_axis(v, axis, th), atol=1e-14)


@given(vec, nonzero_vec, angle)
def test_rotation_preserves_norm_and_axis_component(v, axis, theta):
    k = axis / np.linalg.norm(axis)
    out = rotate_about_axis(v, k, theta)
    n = np.linalg.norm(v)
    assert abs(np.linalg.norm(out) - n) <= 1e-12 * max(n, 1.0)
    assert abs(out @ k - v @ k) <= 1e-12 * max(n, 1.0)


@given(nonzero_vec, st.floats(0.01, 3.0))
def test_rotation_is_right_handed(axis, theta):
    k = axis / np.linalg.norm(axis)
    v = np.cross(k, [1.0, 0.0, 0.0])
    if np.linalg.norm(v) < 1e-3:
        v = np.cross(k, [0.0, 1.0, 0.0])
    out = rotate_about_axis(v, k, theta)
    # a small positive turn moves v toward k x v
    assert np.cross(v, out) @ k > 0.0 or theta > math.pi


def test_root_examples():
    assert largest_root_in_unit_interval(QuadraticCoeffs(1.0, 0.0, -1.0), 2.0) == 1.0
    assert largest_root_in_unit_interval(QuadraticCoeffs(1.0, 0.0, 1.0), 2.0) is None


def test_planted_roots():
    # (s - 0.3)(s - 0.8) scaled by a random factor
    for scale in (0.37, -2.5, 1e6):
        q = QuadraticCoeffs(scale, -1.1 * scale, 0.24 * scale)
        assert largest_root_in_unit_interval(q, 1.0) == pytest.approx(0.8, abs=1e-12)


def test_degenerate_quadratics():
    assert largest_root_in_unit_interval(QuadraticCoeffs(0.0, 0.0, 1.0), 1.0) is None
    assert largest_root_in_unit_interval(QuadraticCoeffs(0.0, 0.0, 0.0), 1.5) == 1.5
    assert largest_root_in_unit_interval(QuadraticCoeffs(0.0, 2.0, -1.0), 1.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        largest_root_in_unit_interval(QuadraticCoeffs(1.0, 0.0, -1.0), 0.0)


def test_cancellation_free_small_root():
    # roots 1e-9 and 1e9: the naive formula loses the small one entirely
    q = QuadraticCoeffs(1.0, -(1e9 + 1e-9), 1.0)
    assert largest_root_in_unit_interval(q, 1.0) == pytest.approx(1e-9, rel=1e-12)


coef = st.floats(-100.0, 100.0, allow_nan=False)


@given(coef, coef, coef)
def test_returned_root_is_a_root(a, b, c):
    s = largest_root_in_unit_interval(QuadraticCoeffs(a, b, c), 1.0)
    if s is not None:
        assert 0.0 <= s <= 1.0
        assert abs((a * s + b) * s + c) <= 1e-8 * max(abs(a), abs(b), abs(c), 1.0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.1, 10.0), st.booleans())
def test_larger_of_two_roots_matches_scan(r1, r2, scale, flip):
    if abs(r1 - r2) < 1e-3:
        return
    a = -scale if flip else scale
    q = QuadraticCoeffs(a, -a * (r1 + r2), a * r1 * r2)
    s = largest_root_in_unit_interval(q, 1.0)
    ref = scan_largest_root(q.a, q.b, q.c, 1.0)
    assert s == pytest.approx(max(r1, r2), abs=1e-9)
    assert abs(s - ref) <= 1e-5 + 1e-12
