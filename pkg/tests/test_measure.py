import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgmt.measure import GHFailure, check_adr, covering_sum, gh_time_advance, valid_scale_range
from pgmt.pargeo import project_pi
from pgmt.surfaces import InvariantError, build_hyperplane, build_two_graph_example


def _covering_oracle(P, eta, delta):
    # independent: python set of occupied cells
    cells = {tuple(int(np.floor(v / s)) for v, s in zip(p, [delta] * (len(p) - 1) + [delta * delta]))
             for p in P}
    diam = np.sqrt(P.shape[1] - 1) * delta + delta
    return len(cells) * diam ** eta


@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.25, 0.125]))
def test_covering_sum_matches_oracle(seed, delta):
    P = np.random.default_rng(seed).uniform(-1, 1, (200, 3))
    assert covering_sum(P, 3.0, delta) == pytest.approx(_covering_oracle(P, 3.0, delta))


@given(st.integers(0, 10_000))
def test_projection_never_increases_covering_sum(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (300, 3))
    for delta in (0.5, 0.25, 0.1):
        assert covering_sum(project_pi(P), 3.0, delta, dims=2) <= covering_sum(P, 3.0, delta) + 1e-12


@pytest.mark.parametrize("n", [1, 2])
def test_hyperplane_adr_constant(n):
    s = build_hyperplane(n, half_width=4.0, half_time=16.0, pitch=2.0 ** -4)
    centers = np.zeros((1, n + 1))
    rep = check_adr(s, centers, [0.25, 0.5, 1.0])
    assert rep.ratio_min == pytest.approx(2 ** n, rel=1e-12)
    assert rep.ratio_max == pytest.approx(2 ** n, rel=1e-12)
    fwd = check_adr(s, centers, [0.5], "time-forward")
    assert fwd.ratio_max == pytest.approx(2 ** (n - 1), rel=1e-12)


def test_check_adr_rejects_scales_outside_window():
    s = build_hyperplane(1, half_width=2.0, half_time=4.0, pitch=2.0 ** -4)
    lo, hi = valid_scale_range(s)
    with pytest.raises(InvariantError, match="check_adr"):
        check_adr(s, np.zeros((1, 2)), [hi * 2])
    with pytest.raises(InvariantError, match="check_adr"):
        check_adr(s, np.zeros((1, 2)), [lo / 2])


def test_check_adr_rejects_off_surface_centre():
    s = build_hyperplane(1, half_width=4.0, half_time=16.0, pitch=2.0 ** -4)
    with pytest.raises(InvariantError, match="not on the surface"):
        check_adr(s, np.array([[0.3, 0.0]]), [0.5])


def test_gh_time_advance_steps_into_the_past():
    s = build_two_graph_example(4.0, 2.0 ** -6)
    p = np.array([2.0, 1.0])
    q, mass = gh_time_advance(s, p, 0.5, a1=0.25)
    assert q.time < 1.0 - (0.25 * 0.5) ** 2
    assert mass > 0
    q2, _ = gh_time_advance(s, p, 0.5, a1=0.25, earliest=True)
    assert q2.time <= q.time


def test_gh_time_advance_fails_without_past_mass():
    s = build_hyperplane(1, half_width=4.0, half_time=1.0, pitch=2.0 ** -4)
    with pytest.raises(GHFailure):
        gh_time_advance(s, np.array([0.0, -0.9999]), 0.25, check_scale=False)
