import numpy as np
import pytest

from pgmt.pargeo import ParCube, PointST
from pgmt.surfaces import build_hyperplane, build_two_graph_example
from pgmt.topology import (ComponentLabeling, SyncFailure, chain_constants, find_corkscrews,
                           label_components, sync_via_flatness, sync_via_time_chain, verify_pair)
from pgmt.surfaces import build_parabolic_tree


@pytest.fixture(scope="module")
def plane():
    return build_hyperplane(1, half_width=4.0, half_time=16.0, pitch=2.0 ** -5)


def _window(c, r):
    return ParCube(PointST.from_array(np.asarray(c, dtype=float)), r)


def test_plane_splits_window_in_two(plane):
    lab = label_components(plane, _window([0, 0], 1.0), 1 / 32)
    assert lab.n_components == 2


def test_window_off_the_plane_is_connected(plane):
    lab = label_components(plane, _window([2, 0], 0.5), 1 / 32)
    assert lab.n_components == 1


def test_two_graphs_give_three_components(two_graph):
    lab = label_components(two_graph, _window([0, 0], 2.0), 1 / 16)
    assert lab.n_components == 3


def test_labels_agree_with_component_oracle(two_graph):
    lab = label_components(two_graph, _window([0, 0], 2.0), 1 / 16)
    rng = np.random.default_rng(0)
    Q = rng.uniform([-1.9, -3.9], [1.9, 3.9], (400, 2))
    L = lab.label_at(Q)
    comp = two_graph.component_fn(Q)
    free = L > 0
    # the map label -> true component is a bijection on free voxels
    pairs = set(zip(L[free].tolist(), comp[free].tolist()))
    assert len(pairs) == len({a for a, _ in pairs}) == len({b for _, b in pairs})


def test_rle_round_trip(tmp_path, two_graph):
    lab = label_components(two_graph, _window([1, 0], 1.0), 1 / 16)
    path = tmp_path / "labels.rle"
    lab.to_rle(path)
    back = ComponentLabeling.from_rle(path)
    assert np.array_equal(back.labels, lab.labels)
    assert back.n_components == lab.n_components
    assert back.pitch == lab.pitch


def test_strong_pair_on_plane(plane):
    lab = label_components(plane, _window([0, 0], 1.0), 1 / 32)
    pair = find_corkscrews(plane, lab, np.zeros(2), 1.0, mode="strong")
    assert pair is not None and pair.synchronized
    # the largest cubes have half-length just under 1/2
    assert 0.4375 <= pair.gamma_achieved <= 0.5
    assert verify_pair(plane, lab, pair, np.zeros(2), 1.0)["all"]


def test_verify_pair_rejects_cube_on_surface(plane):
    lab = label_components(plane, _window([0, 0], 1.0), 1 / 32)
    pair = find_corkscrews(plane, lab, np.zeros(2), 1.0, mode="strong")
    bad = type(pair)(ParCube(PointST((0.0,), 0.0), 0.25), pair.cube2, pair.rho, pair.labels,
                     True, pair.gamma_achieved)
    assert not verify_pair(plane, lab, bad, np.zeros(2), 1.0)["all"]


def test_no_pair_in_connected_window(plane):
    lab = label_components(plane, _window([2, 0], 0.5), 1 / 32)
    assert find_corkscrews(plane, lab, np.array([2.0, 0.0]), 0.5) is None


@pytest.mark.parametrize("gamma0,a1,C1", [(0.125, 0.25, 128.0), (0.25, 0.1, 16.0), (0.5, 0.4, 4.0)])
def test_chain_constants_closed_form(gamma0, a1, C1):
    C2, bound = chain_constants(gamma0, a1, C1)
    C2_ref = max(C1 + 1, C1 ** 2 * a1 ** 2 / (40 * gamma0))
    assert C2 == pytest.approx(C2_ref)
    assert bound == pytest.approx(4 * C2_ref ** 2 / (C1 ** 2 * gamma0 ** 2 * a1 ** 2))


def test_time_chain_on_two_graph(two_graph):
    p = np.array([1.0, 0.0])
    res = sync_via_time_chain(two_graph, p, 1.0, 0.125)
    assert res.pair.cube1.center.time == res.pair.cube2.center.time
    assert res.steps <= res.step_bound
    assert verify_pair(two_graph, None, res.pair, p, 1.0)["all"]


def test_flatness_sync_at_tree_junction():
    s = build_parabolic_tree(6, pitch=2.0 ** -9)
    res = sync_via_flatness(s, None, None, np.array([0.0, 0.0]), 0.5, 0.01, 6)
    assert res.depth <= 6
    assert res.sandwich_max < 0.01
    assert res.pair.cube1.center.time == res.pair.cube2.center.time


def test_flatness_sync_off_surface_fails_cleanly():
    s = build_parabolic_tree(6, pitch=2.0 ** -9)
    with pytest.raises(SyncFailure):
        sync_via_flatness(s, None, None, np.array([0.0, 0.25]), 0.5, 0.01, 6)
