import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgmt.dyadic import build_dyadic
from pgmt.flatness import (beta2, beta_dyadic, beta_inf, bilateral_beta, carleson_norm,
                           comparison_sides, minimax_plane, tls_plane)
from pgmt.surfaces import build_hyperplane, build_parabolic_tree, build_two_graph_example, tree_segments


@pytest.mark.parametrize("n", [1, 2])
def test_hyperplane_is_flat(n):
    s = build_hyperplane(n, half_width=2.0, half_time=4.0, pitch=2.0 ** -4)
    rng = np.random.default_rng(n)
    idx = rng.choice(len(s), 10, replace=False)
    for i in idx:
        for r in (0.25, 0.5):
            assert beta2(s, s.points[i], r).value <= 1e-12
            assert beta_inf(s, s.points[i], r).value <= 1e-12


def test_hyperplane_bilateral_beta_zero():
    T = build_dyadic(build_hyperplane(1, half_width=2.0, half_time=4.0, pitch=2.0 ** -6), 0, 3)
    for k in range(0, 4):
        assert bilateral_beta(T, k, 0).value <= 1e-12


@given(st.integers(0, 10_000))
def test_tls_plane_matches_svd(seed):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(60, 2)) * [3.0, 0.3]
    w = rng.uniform(0.5, 2.0, 60)
    res, nu, off = tls_plane(Y, w)
    mean = (w[:, None] * Y).sum(0) / w.sum()
    Z = (Y - mean) * np.sqrt(w)[:, None]
    s, V = np.linalg.eigh(Z.T @ Z)
    assert res == pytest.approx(s[0], rel=1e-9, abs=1e-12)
    assert abs(abs(nu @ V[:, 0]) - 1) < 1e-8


@given(st.integers(0, 10_000))
def test_minimax_plane_one_dimensional(seed):
    # a time-independent plane in one space dimension is a point: the best
    # half width is half the spatial range
    Y = np.random.default_rng(seed).uniform(-1, 1, (40, 1))
    hw, _, _ = minimax_plane(Y)
    assert hw == pytest.approx((Y.max() - Y.min()) / 2, abs=1e-12)


def test_minimax_plane_strip_two_dimensional():
    # points on two parallel lines at distance 0.4: half width 0.2
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, 50)
    d = np.array([np.cos(0.3), np.sin(0.3)])
    nrm = np.array([-d[1], d[0]])
    Y = np.concatenate([u[:25, None] * d + 0.2 * nrm, u[25:, None] * d - 0.2 * nrm])
    hw, nu, _ = minimax_plane(Y)
    assert hw == pytest.approx(0.2, rel=1e-3)


def test_local_beta_at_segment_midpoints():
    # on a straight piece x = 2^k tau with unit time density the best plane
    # leaves beta_2^2 = (2/3) 4^k r^2
    tree = build_parabolic_tree(8, pitch=2.0 ** -9)
    for k in range(2, 6):
        r = 2.0 ** (-k - 2)
        seg = next(s for s in tree_segments(8) if s.generation == k)
        mid = (np.array(seg.start) + np.array(seg.end)) / 2
        ratio = beta2(tree, mid, r).value ** 2 / (4 ** k * r * r)
        assert ratio == pytest.approx(2 / 3, rel=5e-3)


@pytest.mark.parametrize("which", ["two_graph", "tree"])
def test_comparison_inequality(which):
    s = (build_two_graph_example(8.0, 2.0 ** -6) if which == "two_graph"
         else build_parabolic_tree(7, pitch=2.0 ** -8))
    rng = np.random.default_rng(5)
    live = np.flatnonzero(s.weights > 0)
    for i in rng.choice(live, 15, replace=False):
        r = 2.0 ** rng.uniform(-5, -2)
        lhs, rhs = comparison_sides(s, s.points[i], r)
        assert lhs <= rhs + 10 * s.resolution / r


def test_dyadic_beta_zero_on_plane():
    T = build_dyadic(build_hyperplane(1, half_width=2.0, half_time=4.0, pitch=2.0 ** -6), 0, 3)
    assert beta_dyadic(T, 2, 0, "dyadic_beta_inf").value <= 1e-12
    assert beta_dyadic(T, 2, 0, "dyadic_beta2").value <= 1e-12


def test_carleson_norm_of_plane_vanishes():
    s = build_hyperplane(1, half_width=4.0, half_time=16.0, pitch=2.0 ** -6)
    rep = carleson_norm(s, [(np.array([0.0, 0.0]), 1.0)], scale_subdivisions=8)
    assert rep.norm_estimate <= 1e-20


def test_carleson_norm_needs_enough_subdivisions():
    s = build_hyperplane(1, pitch=2.0 ** -4)
    with pytest.raises(ValueError):
        carleson_norm(s, [(np.zeros(2), 0.5)], scale_subdivisions=4)
