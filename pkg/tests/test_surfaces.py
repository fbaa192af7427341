import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgmt.pargeo import ParCube, PointST, par_dist
from pgmt.surfaces import (GraphFunction, InvariantError, build_graph_surface, build_hyperplane,
                           build_parabolic_tree, build_two_graph_example, grid_lip_constant,
                           load_point_cloud, random_lip_graph, save_point_cloud, surface_measure,
                           tree_branch_points, tree_branch_times, tree_segments, two_graph_psi)


def test_two_graph_values():
    assert two_graph_psi(0.0, 1) == 1.0
    assert two_graph_psi(0.0, -1) == -1.0
    assert two_graph_psi(4.0, 1) == 3.0


def test_two_graph_lip_constant_exhaustive():
    # |sqrt|t| - sqrt|s|| <= |t - s|^(1/2), checked over all pairs of a dyadic grid
    t = np.arange(-256, 257) / 64.0
    v = two_graph_psi(t, 1)
    d = np.abs(v[:, None] - v[None, :])
    gap = np.sqrt(np.abs(t[:, None] - t[None, :]))
    np.fill_diagonal(gap, np.inf)
    assert (d / gap).max() <= 1 + 1e-9


def test_branch_points_generation_two():
    S2 = tree_branch_points(2)
    assert tree_branch_times(2)[2] == 5 / 16
    assert S2[:, 0].tolist() == [-0.75, -0.25, 0.25, 0.75]
    assert np.all(S2[:, 1] == 5 / 16)


def test_first_generation_endpoint():
    ends = sorted(s.end for s in tree_segments(1))
    assert ends == [(-0.5, 0.25), (0.5, 0.25)]


@pytest.mark.parametrize("K", [1, 3, 7])
def test_tree_weight_geometric_series(K):
    s = build_parabolic_tree(K, pitch=2.0 ** -7)
    assert s.meta["tree_weight"] == pytest.approx(1 - 2.0 ** -K, abs=1e-12)


def test_tree_lumps_unresolved_generations():
    s = build_parabolic_tree(14, pitch=2.0 ** -6)
    assert s.meta["resolved_generations"] == 6
    assert s.meta["tree_weight"] == pytest.approx(1 - 2.0 ** -14, abs=1e-12)


def test_tree_samples_pass_membership(tree8):
    P = tree8.points
    idx = np.random.default_rng(0).choice(len(P), 5000, replace=False)
    assert np.all(tree8.contains(P[idx], 1e-9))


def test_tree_closure_reaches_face_dyadics():
    K = 8
    s = build_parabolic_tree(K, pitch=2.0 ** -9)
    live = s.points[s.weights > 0]
    for m in range(0, K - 1):
        for a in range(-2 ** m, 2 ** m + 1):
            q = np.array([a * 2.0 ** -m, 1 / 3])
            assert par_dist(live, q[None, :]).min() <= 2.0 ** (-K + 2)


@pytest.mark.parametrize("n", [1, 2])
def test_hyperplane_measure_closed_form(n):
    s = build_hyperplane(n, pitch=2.0 ** -4)
    r = 0.5
    m = surface_measure(s, ParCube(PointST((0.0,) * n, 0.0), r))
    assert m == pytest.approx(2 ** n * r ** (n + 1), rel=2 * s.resolution / r)


def test_surface_measure_empty_region():
    s = build_hyperplane(1, pitch=2.0 ** -4)
    assert surface_measure(s, ParCube(PointST((1.5,), 0.0), 0.25)) == 0.0


def test_measure_stable_under_resolution_doubling():
    rng = np.random.default_rng(3)
    a, b = build_two_graph_example(4.0, 2.0 ** -6), build_two_graph_example(4.0, 2.0 ** -7)
    for _ in range(50):
        t = rng.uniform(-2, 2)
        c = PointST((two_graph_psi(t, 1) + rng.uniform(-0.1, 0.1),), t)
        Q = ParCube(c, 0.5)
        ma, mb = surface_measure(a, Q), surface_measure(b, Q)
        assert abs(ma - mb) <= 0.05 * max(ma, mb) + 1e-12


def test_point_cloud_round_trip(tmp_path):
    s = build_two_graph_example(1.0, 2.0 ** -4)
    path = tmp_path / "cloud.csv"
    save_point_cloud(s, path)
    back = load_point_cloud(path, resolution=s.resolution)
    assert np.array_equal(back.points, s.points)
    assert np.array_equal(back.weights, s.weights)


def test_graph_surface_rejects_bad_lip_constant():
    g = GraphFunction.from_function(lambda P: 3 * P[:, 0], [-1, -1], [1, 1], 0.125, lip_constant=1.0)
    with pytest.raises(InvariantError):
        build_graph_surface(g, 2)


@given(st.floats(-3, 3), st.floats(0.1, 2))
def test_grid_lip_of_linear_function(a, scale):
    g = GraphFunction.from_function(lambda P: a * scale * P[:, 0], [-1, -1], [1, 1], 0.125)
    assert grid_lip_constant(g.values, g.pitch) == pytest.approx(abs(a * scale), rel=1e-9, abs=1e-12)


def test_random_lip_graph_respects_bound():
    s = random_lip_graph(5, half_time=1.0, pitch=2.0 ** -5, b=0.5)
    assert grid_lip_constant(s.graph.values, s.graph.pitch) <= 0.5 + 1e-9
