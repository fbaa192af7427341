import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgmt.bigpieces import (cone_envelope, grid_mask, maximal_bad_set, planar_normaliser, projected_measure,
                            run_big_pieces, whitney_extend)
from pgmt.calibrate import random_whitney_instance
from pgmt.regularity import lip_estimate
from pgmt.surfaces import build_two_graph_example, two_graph_psi


def _union_length(lo, hi):
    # independent oracle: sweep over sorted endpoints
    events = sorted([(a, 1) for a in lo] + [(b, -1) for b in hi], key=lambda e: (e[0], -e[1]))
    depth, total, start = 0, 0.0, None
    for x, d in events:
        if depth == 0 and d == 1:
            start = x
        depth += d
        if depth == 0:
            total += x - start
    return total


@given(st.integers(0, 10_000))
def test_projected_measure_interval_union(seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1, 1, 30)
    w = rng.uniform(0.0, 0.2, 30)
    P = np.stack([rng.normal(size=30), t], axis=1)
    got = projected_measure(P, w, 1, 0.1)
    assert got == pytest.approx(_union_length(t - w / 2, t + w / 2) * planar_normaliser(1), abs=1e-12)


@given(st.integers(0, 10_000))
def test_projected_measure_cells(seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(-1, 1, (50, 3))
    pitch = 0.25
    cells = {(int(np.floor(p[0] / pitch)), int(np.floor(p[2] / pitch ** 2))) for p in P}
    expect = len(cells) * pitch * pitch ** 2 * planar_normaliser(2)
    assert projected_measure(P, np.ones(50), 2, pitch) == pytest.approx(expect)


def test_projection_never_exceeds_weight():
    rng = np.random.default_rng(1)
    t = np.sort(rng.uniform(-1, 1, 100))
    w = np.full(100, 0.01)
    P = np.stack([np.zeros(100), t], axis=1)
    assert projected_measure(P, w, 1, 0.1) <= w.sum() * planar_normaliser(1) + 1e-15


@pytest.mark.parametrize("seed", [0, 3, 7])
def test_whitney_certificates(seed):
    E, g = random_whitney_instance(seed)
    ext = whitney_extend(E, g, g.lip_constant, lip_factor=32.0)
    c = ext.certificates
    assert c["covering"] and c["disjoint"] and c["E_uncovered"]
    assert c["partition_error"] <= 1e-9
    assert c["comparability_lower"] and c["comparability_upper"]
    assert c["agrees_on_E"]
    assert c["lip_ok"]


def test_whitney_rejects_mismatched_mask():
    E, g = random_whitney_instance(0)
    with pytest.raises(ValueError):
        whitney_extend(E[:-1], g, 1.0)


def test_grid_mask_marks_cells():
    E, g = random_whitney_instance(0)
    pts = g.nodes()[:5]
    M = grid_mask(pts, g)
    assert M.sum() == 5


@pytest.fixture(scope="module")
def two_graph_run():
    s = build_two_graph_example(half_time=16.0, pitch=2.0 ** -6)
    bases = [(np.array([two_graph_psi(t, 1), t]), 0.25) for t in (-0.5, 0.0, 0.5)]
    return run_big_pieces(s, np.array([1.0, 0.0]), 1.0, bases, M_adr=2.0)


@pytest.mark.slow
def test_two_graph_pipeline(two_graph_run):
    run = two_graph_run
    assert run.envelope.shadow_measure >= 1 / 8
    assert lip_estimate(run.envelope.psi) <= run.envelope.h * (1 + 1e-9)
    cert = run.good.certificate()
    assert cert["projection_le_sigma"] and cert["sigma_le_bound"] and cert["bound_le_target"]
    summary = run.summary()
    assert {"setup", "envelope", "nu", "good_set", "whitney"} <= set(summary)


@pytest.mark.slow
def test_bad_set_markov_bound(two_graph_run):
    prev = np.inf
    for N in (1.0, 2.0, 4.0, 8.0):
        bad = maximal_bad_set(two_graph_run.setup, two_graph_run.surface, N)
        assert bad.measure <= bad.markov_bound * (1 + 1e-9) + 1e-15
        assert bad.measure <= prev + 1e-15
        prev = bad.measure


@pytest.mark.slow
def test_contact_tolerance_is_monotone(two_graph_run):
    run = two_graph_run
    tight = cone_envelope(run.setup, run.surface, contact_tol=0.0)
    loose = cone_envelope(run.setup, run.surface, contact_tol=1.0)
    assert tight.contact_tol == 0.0
    assert tight.shadow_measure <= run.envelope.shadow_measure <= loose.shadow_measure
