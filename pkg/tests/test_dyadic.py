import json

import numpy as np
import pytest

from pgmt.dyadic import build_dyadic, check_dyadic_properties
from pgmt.surfaces import InvariantError, build_hyperplane, build_parabolic_tree


@pytest.fixture(scope="module")
def plane_tree():
    return build_dyadic(build_hyperplane(1, half_width=2.0, half_time=4.0, pitch=2.0 ** -7), 0, 5)


def test_hyperplane_properties(plane_tree):
    res = check_dyadic_properties(plane_tree)
    assert res["all"], res


def test_tree_properties():
    s = build_parabolic_tree(6, pitch=2.0 ** -8)
    res = check_dyadic_properties(build_dyadic(s, 0, 5))
    assert res["all"], res


def test_levels_partition_samples(plane_tree):
    N = len(plane_tree.surface)
    for k in range(plane_tree.k_min, plane_tree.k_max + 1):
        counts = np.zeros(N, dtype=int)
        for j in range(plane_tree.n_cubes(k)):
            counts[plane_tree.members(k, j)] += 1
        assert np.all(counts == 1)


def test_children_nest_in_parent(plane_tree):
    # brute force: every member of a child belongs to the parent cube
    k = plane_tree.k_min + 2
    for j in range(min(plane_tree.n_cubes(k), 20)):
        parent_members = set(plane_tree.members(k, j).tolist())
        for c in plane_tree.children(k, j):
            assert set(plane_tree.members(k + 1, int(c)).tolist()) <= parent_members


def test_cube_count_grows_with_level(plane_tree):
    counts = [plane_tree.n_cubes(k) for k in range(plane_tree.k_min, plane_tree.k_max + 1)]
    assert counts == sorted(counts)
    assert counts[-1] > counts[0]


def test_json_export(plane_tree):
    doc = json.loads(plane_tree.to_json())
    assert isinstance(doc, dict) and doc


def test_rejects_reversed_levels():
    with pytest.raises(ValueError):
        build_dyadic(build_hyperplane(1, pitch=2.0 ** -4), 3, 1)
