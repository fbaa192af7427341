import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pgmt.pargeo import (ConeParams, ParCube, PointST, TimeIndepPlane, cone_contains, dilate,
                         fibonacci_directions, par_dist, plane_distance, project_pi,
                         rotation_to_axis, rotate_spatial)

coords = st.floats(-100, 100, allow_nan=False)
pt2 = arrays(float, 3, elements=coords)


def test_par_dist_simple_values():
    assert par_dist(PointST((0.0,), 0.0), PointST((3.0,), 4.0)) == pytest.approx(5.0)
    assert par_dist(np.array([1.0, 2.0, 0.0]), np.array([1.0, 2.0, 9.0])) == pytest.approx(3.0)


@given(pt2, pt2, pt2)
def test_par_dist_is_a_metric(a, b, c):
    assert par_dist(a, a) == 0
    assert par_dist(a, b) == pytest.approx(par_dist(b, a))
    assert par_dist(a, c) <= par_dist(a, b) + par_dist(b, c) + 1e-9


@given(pt2, pt2, st.floats(0.01, 50))
def test_dilation_scales_distance(a, b, lam):
    assert par_dist(dilate(a, lam), dilate(b, lam)) == pytest.approx(lam * par_dist(a, b), rel=1e-9, abs=1e-9)


def test_pointst_rejects_nan():
    with pytest.raises(ValueError):
        PointST((np.nan,), 0.0)


def test_cube_membership_and_bounds():
    Q = ParCube(PointST((0.0,), 0.0), 0.5)
    P = np.array([[0.49, 0.24], [0.5, 0.0], [0.0, 0.26], [0.0, 0.1]])
    assert Q.contains(P).tolist() == [True, False, False, True]
    assert Q.contains(P, closed=True).tolist() == [True, True, False, True]
    assert Q.contains(P, half=-1).tolist() == [False, False, False, False]
    lo, hi = Q.bounds()
    assert lo.tolist() == [-0.5, -0.25] and hi.tolist() == [0.5, 0.25]
    with pytest.raises(ValueError):
        ParCube(PointST((0.0,), 0.0), 0.0)


def test_cube_diameter_matches_corner_distance():
    Q = ParCube(PointST((0.0, 0.0), 0.0), 1.0)
    corner_a = np.array([-1.0, -1.0, -1.0])
    corner_b = np.array([1.0, 1.0, 1.0])
    assert Q.diameter() == pytest.approx(par_dist(corner_a, corner_b))


def test_projection_drops_one_spatial_axis():
    p = np.array([[1.0, 2.0, 3.0]])
    assert project_pi(p).tolist() == [[1.0, 3.0]]
    assert project_pi(p, axis=0).tolist() == [[2.0, 3.0]]


@given(arrays(float, 3, elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_rotation_to_axis_is_orthogonal(v):
    Rm = rotation_to_axis(v)
    assert np.allclose(Rm @ Rm.T, np.eye(3), atol=1e-12)
    assert np.allclose(Rm @ (v / np.linalg.norm(v)), [0, 0, 1], atol=1e-12)


def test_rotate_spatial_keeps_time():
    Rm = rotation_to_axis(np.array([1.0, 0.0]), axis=0)
    P = np.array([[0.3, -0.2, 7.0]])
    assert rotate_spatial(P, Rm)[0, -1] == 7.0


def test_plane_distance_is_time_independent():
    pl = TimeIndepPlane.from_normal(np.array([0.0, 2.0]), 2.0)
    P = np.array([[5.0, 3.0, 0.0], [5.0, 3.0, 100.0]])
    assert np.allclose(plane_distance(P, pl), [2.0, 2.0])


def test_cone_membership():
    cone = ConeParams(aperture=2.0)
    apex = np.array([0.0, 0.0])
    assert cone_contains(apex, np.array([1.0, 0.25]), cone)
    assert not cone_contains(apex, np.array([0.5, 0.25]), cone)


def test_fibonacci_directions_are_unit():
    D = fibonacci_directions(3, 50)
    assert np.allclose(np.linalg.norm(D, axis=1), 1.0)
