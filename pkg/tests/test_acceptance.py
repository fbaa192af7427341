"""Acceptance criteria 1-18, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (also
collected in the pytest terminal summary) and asserts both the numerical
condition and the runtime limit.  Run directly with
``python tests/test_acceptance.py`` to get only those lines.
"""
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from pgmt import calibrate as cal
from pgmt.harness import calibrated

pytestmark = pytest.mark.acceptance

_LOG = []


@pytest.fixture(autouse=True)
def _log(acceptance_log):
    global _LOG
    _LOG = acceptance_log
    yield


def record(n, ok, detail, elapsed, limit):
    ok_time = elapsed < limit
    status = "PASS" if (ok and ok_time) else "FAIL"
    line = f"criterion {n}: {status} {detail} [{elapsed:.2f}s < {limit}s: {ok_time}]"
    print(line)
    _LOG.append(line)
    assert ok, line
    assert ok_time, line


# ---------------------------------------------------------------------------

def test_c01_geometric_series():
    from pgmt.surfaces import build_parabolic_tree

    t0 = time.perf_counter()
    w = build_parabolic_tree(40).meta["tree_weight"]
    err = abs(w - (1 - 2.0 ** -40))
    record(1, err <= 1e-12, f"tree weight error {err:.2e}", time.perf_counter() - t0, 1)


def test_c02_branch_points():
    from pgmt.surfaces import tree_branch_points, tree_branch_times

    t0 = time.perf_counter()
    S2 = tree_branch_points(2)
    got = sorted(map(tuple, S2.tolist()))
    want = sorted((x, 5 / 16) for x in (-0.75, -0.25, 0.25, 0.75))
    ok = got == want and tree_branch_times(2)[2] == 5 / 16
    record(2, ok, f"S2 = {got}", time.perf_counter() - t0, 1)


def test_c03_fractal_adr():
    from pgmt.measure import check_adr

    t0 = time.perf_counter()
    lo, hi = calibrated("adr_bracket_tree")
    s = cal.adr_tree()
    C = cal.tree_adr_centers(s, 50, 0)
    worst = [np.inf, 0.0]
    for variant in ("full", "time-forward", "time-backward"):
        rep = check_adr(s, C, cal.ADR_SCALES, variant)
        worst = [min(worst[0], rep.ratio_min), max(worst[1], rep.ratio_max)]
    ok = lo <= worst[0] and worst[1] <= hi
    record(3, ok, f"ratios in [{worst[0]:.4f}, {worst[1]:.4f}] within frozen [{lo}, {hi}]",
           time.perf_counter() - t0, 60)


def test_c04_hyperplane_exactness():
    from pgmt.dyadic import build_dyadic
    from pgmt.flatness import beta2, beta_inf, bilateral_beta
    from pgmt.measure import check_adr
    from pgmt.surfaces import build_hyperplane

    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_beta, worst_adr = 0.0, 0.0
    pitch = 2.0 ** -4
    for n in (1, 2):
        s = build_hyperplane(n, half_width=4.0, half_time=16.0, pitch=pitch)
        # centres on grid vertices of the plane, where the sampled measure is exact
        C = np.zeros((100, n + 1))
        C[:, -1] = rng.integers(-128, 128, 100) * pitch ** 2
        if n == 2:
            C[:, 0] = rng.integers(-16, 16, 100) * pitch
        R = 2.0 ** -rng.integers(0, 3, 100)
        for c, r in zip(C, R):
            worst_beta = max(worst_beta, beta2(s, c, r).value, beta_inf(s, c, r).value)
        ratios = check_adr(s, C, [0.25, 0.5, 1.0]).ratios
        worst_adr = max(worst_adr, float(np.max(np.abs(ratios / ratios[:, :1] - 1))))
        small = build_hyperplane(n, half_width=1.0 if n == 2 else 2.0,
                                 half_time=1.0 if n == 2 else 4.0, pitch=pitch)
        T = build_dyadic(small, 0, 3)
        cubes = [(k, int(j)) for k in range(4)
                 for j in rng.choice(T.n_cubes(k), min(25, T.n_cubes(k)), replace=False)]
        for k, j in cubes[:100]:
            worst_beta = max(worst_beta, bilateral_beta(T, k, j).value)
    ok = worst_beta <= 1e-12 and worst_adr <= 1e-6
    record(4, ok, f"max beta {worst_beta:.1e}, ADR ratio spread {worst_adr:.1e}",
           time.perf_counter() - t0, 10)


def test_c05_comparison_inequality():
    from pgmt.flatness import comparison_sides
    from pgmt.measure import valid_scale_range
    from pgmt.surfaces import (build_hyperplane, build_parabolic_tree, build_two_graph_example,
                               random_lip_graph)

    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    surfaces = {
        "hyperplane": build_hyperplane(1, half_width=4.0, half_time=16.0, pitch=2.0 ** -5),
        "two_graph": build_two_graph_example(half_time=16.0, pitch=2.0 ** -6),
        "tree": build_parabolic_tree(8, pitch=2.0 ** -9),
        "random_lip": random_lip_graph(0),
    }
    fails = {}
    for name, s in surfaces.items():
        lo, hi = valid_scale_range(s)
        live = np.flatnonzero(s.weights > 0)
        bad = 0
        for i in rng.choice(live, 100, replace=False):
            r = float(np.exp(rng.uniform(np.log(lo), np.log(hi / 2))))
            lhs, rhs = comparison_sides(s, s.points[i], r)
            bad += lhs > rhs + 10 * s.resolution / r
        fails[name] = int(bad)
    record(5, sum(fails.values()) == 0, f"violations per surface {fails}", time.perf_counter() - t0, 60)


def test_c06_carleson_scaling():
    from pgmt.flatness import carleson_norm
    from pgmt.surfaces import build_parabolic_tree

    t0 = time.perf_counter()
    tree = build_parabolic_tree(10)
    rng = np.random.default_rng(1)
    P, W = tree.points, tree.weights
    face = np.flatnonzero((W == 0) & (np.abs(P[:, -1] - 1 / 3) < 1e-12) & (np.abs(P[:, 0]) < 0.9))
    seg = np.flatnonzero((W > 0) & (P[:, -1] > 0.01) & (P[:, -1] < 0.65))
    B = np.vstack([P[rng.choice(face, 10)], P[rng.choice(seg, 10)]])
    rs = [2.0 ** -k for k in range(7)]
    sup_nu, finite = [], True
    for r in rs:
        rep = carleson_norm(tree, [(b, r) for b in B])
        finite &= bool(np.isfinite(rep.norm_estimate))
        # nu(Delta_r x (0, r)) is the normalised sum times r^{n+1}
        sup_nu.append(rep.norm_estimate * r ** 2)
    slope = float(np.polyfit(np.log(rs), np.log(sup_nu), 1)[0])
    record(6, finite and abs(slope - 2) <= 0.2, f"log-log slope {slope:.3f}",
           time.perf_counter() - t0, 120)


def test_c07_local_beta_anchor():
    from pgmt.flatness import beta2
    from pgmt.surfaces import build_parabolic_tree, tree_segments

    t0 = time.perf_counter()
    tree = build_parabolic_tree(10)
    segs = tree_segments(10)
    lo, hi = np.inf, 0.0
    for k in range(2, 7):
        r = 2.0 ** (-k - 2)
        for sg in [s for s in segs if s.generation == k][:8]:
            mid = (np.array(sg.start) + np.array(sg.end)) / 2
            v = beta2(tree, mid, r).value ** 2 / (4 ** k * r * r)
            lo, hi = min(lo, v), max(hi, v)
    record(7, 1 / 100 <= lo and hi <= 100, f"normalised beta2^2 in [{lo:.4f}, {hi:.4f}]",
           time.perf_counter() - t0, 30)


def test_c08_dyadic_system():
    from pgmt.dyadic import build_dyadic, check_dyadic_properties
    from pgmt.surfaces import build_hyperplane, build_parabolic_tree

    t0 = time.perf_counter()
    res = {}
    for name, s in (("tree", build_parabolic_tree(8, pitch=2.0 ** -9)),
                    ("hyperplane", build_hyperplane(1, half_width=2.0, half_time=4.0, pitch=2.0 ** -9))):
        res[name] = check_dyadic_properties(build_dyadic(s, 0, 8))
    ok = all(r["all"] for r in res.values())
    detail = {k: (r["all"], round(r["diameter_ratio"], 3), round(r["alpha"], 3)) for k, r in res.items()}
    record(8, ok, f"(all, diameter ratio, alpha) {detail}", time.perf_counter() - t0, 60)


def test_c09_sync_dichotomy():
    from pgmt.pargeo import ParCube, PointST
    from pgmt.surfaces import build_two_graph_example
    from pgmt.topology import find_corkscrews, label_components

    t0 = time.perf_counter()
    s = build_two_graph_example(half_time=4096.0, pitch=2.0 ** -2)
    p = np.array([1.0, 0.0])
    floor = calibrated("weak_sync_floor")
    strong, weak = [], []
    for k in range(2, 7):
        r = 2.0 ** k
        lab = label_components(s, ParCube(PointST.from_array(p), r), r / 64)
        st = find_corkscrews(s, lab, p, r, mode="strong", region=1)
        wk = find_corkscrews(s, lab, p, r, mode="weak", region=1)
        strong.append(0.0 if st is None else st.gamma_achieved)
        weak.append(0.0 if wk is None else wk.gamma_achieved)
    scaled = [g * 2.0 ** k for g, k in zip(strong, range(2, 7))]
    decays = all(v <= scaled[0] * (1 + 1e-9) for v in scaled)
    ok = decays and min(weak) >= floor
    record(9, ok, f"strong {np.round(strong, 4).tolist()}, weak {np.round(weak, 4).tolist()}, "
                  f"gamma_1 {floor}", time.perf_counter() - t0, 120)


def test_c10_time_chain():
    from pgmt.surfaces import build_two_graph_example, random_lip_graph, two_graph_psi
    from pgmt.topology import SyncFailure, chain_constants, sync_via_time_chain, verify_pair

    t0 = time.perf_counter()
    gamma0 = calibrated("gamma0")
    _, bound = chain_constants(gamma0, 0.25, 128.0)
    s = build_two_graph_example(half_time=4096.0, pitch=2.0 ** -2)
    g = random_lip_graph(3)
    rng = np.random.default_rng(0)
    passed, worst = 0, 0
    for surf, name in ((s, "two_graph"), (g, "random_lip")):
        for _ in range(10):
            if name == "two_graph":
                tt = rng.uniform(-16, 16)
                p = np.array([two_graph_psi(tt, int(rng.choice([-1, 1]))), tt])
                r = 2.0 ** rng.integers(0, 7)
            else:
                tt = rng.uniform(-2, 2)
                p = np.array([g.meta["psi"](tt), tt])
                r = 2.0 ** -rng.integers(0, 5)
            try:
                res = sync_via_time_chain(surf, p, r, gamma0)
            except SyncFailure:
                continue
            pr = res.pair
            ok = (res.steps <= bound and pr.cube1.center.time == pr.cube2.center.time
                  and verify_pair(surf, None, pr, p, r)["all"])
            passed += ok
            worst = max(worst, res.steps)
    record(10, passed == 20, f"{passed}/20 pairs, max steps {worst} <= bound {bound:.0f}",
           time.perf_counter() - t0, 120)


def test_c11_flatness_sync():
    from pgmt.topology import SyncFailure, sync_via_flatness

    t0 = time.perf_counter()
    budget = calibrated("depth_budget")
    s = cal.flatness_tree()
    passed, depths = 0, []
    for p, r in cal.flatness_pairs():
        try:
            res = sync_via_flatness(s, None, None, p, r, 0.01, budget)
        except SyncFailure:
            continue
        depths.append(res.depth)
        passed += res.depth <= budget and res.sandwich_max < 0.01
    record(11, passed == 20, f"{passed}/20 pairs, max depth {max(depths, default=None)} <= {budget}",
           time.perf_counter() - t0, 120)


_RUNS = {}


def _two_graph_run():
    from pgmt.bigpieces import run_big_pieces
    from pgmt.surfaces import build_two_graph_example, two_graph_psi

    if "two_graph" not in _RUNS:
        s = build_two_graph_example(half_time=16.0, pitch=2.0 ** -6)
        bases = [(np.array([two_graph_psi(t, 1), t]), 0.25) for t in (-0.5, 0.0, 0.5)]
        _RUNS["two_graph"] = run_big_pieces(s, np.array([1.0, 0.0]), 1.0, bases, M_adr=2.0)
    return _RUNS["two_graph"]


def test_c12_big_pieces():
    from pgmt.bigpieces import run_big_pieces
    from pgmt.regularity import lip_estimate
    from pgmt.surfaces import build_parabolic_tree

    t0 = time.perf_counter()
    tg = _two_graph_run()
    tree = build_parabolic_tree(8, pitch=2.0 ** -9)
    R = 0.25
    bases = [(np.array([0.0, -0.5]), 0.25), (np.array([0.0, 0.0]), 0.25),
             (np.array([0.0, 1.0 / 3.0]), 0.125)]
    tr = run_big_pieces(tree, np.array([0.0, 0.0]), R, bases, M_adr=calibrated("M_adr")["tree"])
    eps_run = calibrated("eps_run")
    lips = [lip_estimate(r.envelope.psi) / r.envelope.h for r in (tg, tr)]
    ok = (tg.envelope.shadow_measure >= 1 / 8 and tr.contact_shadow_original() >= eps_run * R * R
          and max(lips) <= 1 + 1e-9)
    record(12, ok, f"two-graph shadow {tg.envelope.shadow_measure:.4f} >= 0.125, tree shadow "
                   f"{tr.contact_shadow_original():.5f} >= {eps_run * R * R:.5f}, "
                   f"max lip/h {max(lips):.6f}", time.perf_counter() - t0, 300)


def test_c13_good_set():
    t0 = time.perf_counter()
    _RUNS.pop("two_graph", None)
    cert = _two_graph_run().good.certificate()
    ok = cert["projection_le_sigma"] and cert["sigma_le_bound"] and cert["bound_le_target"]
    record(13, ok, f"removed {cert['removed_projection']:.3e} <= {cert['removed_sigma']:.3e} "
                   f"<= {cert['chebyshev_bound']:.3e} <= {cert['target']:.3e}",
           time.perf_counter() - t0, 60)


def test_c14_whitney():
    from pgmt.bigpieces import whitney_extend

    t0 = time.perf_counter()
    C = calibrated("whitney_lip_factor")
    bad, worst = [], 0.0
    for seed in range(10):
        E, g = cal.random_whitney_instance(seed)
        c = whitney_extend(E, g, g.lip_constant, lip_factor=C).certificates
        ok = (c["covering"] and c["disjoint"] and c["E_uncovered"] and c["comparability_lower"]
              and c["comparability_upper"] and c["partition_error"] <= 1e-9 and c["agrees_on_E"]
              and c["lip_ok"])
        worst = max(worst, c["lip_ratio"])
        if not ok:
            bad.append(seed)
    record(14, not bad, f"failing instances {bad}, max Lip ratio {worst:.3f} <= C = {C}",
           time.perf_counter() - t0, 120)


def test_c15_carleson_transfer():
    t0 = time.perf_counter()
    from pgmt.bigpieces import run_big_pieces
    from pgmt.surfaces import build_parabolic_tree

    tree = build_parabolic_tree(8, pitch=2.0 ** -9)
    tb = [(np.array([q]), r) for q in (-2.0, 0.0, 2.0) for r in (1.0, 2.0)]
    run = run_big_pieces(tree, np.array([0.5, 0.25]), 0.5,
                         [(np.array([0.5, 0.25]), 0.25), (np.array([0.25, 5 / 16]), 0.125),
                          (np.array([0.75, 5 / 16]), 0.125)],
                         M_adr=calibrated("M_adr")["tree"], transfer_bases=tb)
    t = run.transfer
    C = calibrated("c_transfer")
    ok = t.ratio <= C and t.distance_factor <= t.distance_bound
    record(15, ok, f"ratio {t.ratio:.4f} <= {C}, distance factor {t.distance_factor:.2f} "
                   f"<= {t.distance_bound:.2f}", time.perf_counter() - t0, 300)


def test_c16_half_derivative_homogeneity():
    from scipy.integrate import quad

    from pgmt.regularity import half_time_derivative, strichartz_criterion
    from pgmt.surfaces import GraphFunction

    t0 = time.perf_counter()
    r_min, r_max = 2.0 ** -8, 2.0 ** 12

    def amp(w):
        g = GraphFunction.from_function(lambda P: np.cos(w * P[:, 0]), [-2.0 ** 11], [2.0 ** 11],
                                        2.0 ** -4, lip_constant=0)
        D = half_time_derivative(g, r_min, r_max)
        t = g.axes()[0]
        sel = slice(0, None, 997)
        A = np.stack([np.cos(w * t[sel]), np.sin(w * t[sel])], 1)
        c, *_ = np.linalg.lstsq(A, D.values[sel], rcond=None)
        return float(np.hypot(*c))

    def oracle(w):
        I_cos = quad(lambda u: u ** -1.5, r_min, r_max, weight="cos", wvar=w, limit=2000)[0]
        I_one = quad(lambda u: u ** -1.5, r_min, r_max)[0]
        return 2 * abs(I_cos - I_one)

    ratios, oracle_err = [], 0.0
    for om in (1.0, 4.0):
        a, b = amp(om), amp(4 * om)
        ratios.append(b / a)
        oracle_err = max(oracle_err, abs(a / oracle(om) - 1), abs(b / oracle(4 * om) - 1))
    sqrt_graph = lambda k: GraphFunction.from_function(lambda P: np.sqrt(np.abs(P[:, 0])), [-1.0], [1.0],
                                                       2.0 ** (-k / 2), lip_constant=1.0)
    st = [strichartz_criterion(sqrt_graph(k)) for k in (7, 8)]
    stable = np.all(np.isfinite(st)) and abs(st[1] / st[0] - 1) <= 0.1
    ok = all(abs(r / 2 - 1) <= 0.02 for r in ratios) and oracle_err <= 0.02 and stable
    record(16, ok, f"ratios {np.round(ratios, 4).tolist()}, oracle rel err {oracle_err:.1e}, "
                   f"Strichartz {np.round(st, 4).tolist()}", time.perf_counter() - t0, 60)


def test_c17_projection_monotonicity():
    from pgmt.measure import covering_sum
    from pgmt.pargeo import project_pi

    t0 = time.perf_counter()
    rng = np.random.default_rng(17)
    bad = 0
    for i in range(20):
        n = 1 + i % 2
        P = rng.uniform(-1, 1, (int(rng.integers(50, 2000)), n + 1)) * rng.uniform(0.1, 2)
        for delta in (0.5, 0.2, 0.05):
            bad += covering_sum(project_pi(P), n + 1, delta) > covering_sum(P, n + 1, delta)
    record(17, bad == 0, f"{bad} violations over 20 sets x 3 deltas", time.perf_counter() - t0, 30)


def _strip_runtimes(doc):
    if isinstance(doc, dict):
        return {k: _strip_runtimes(v) for k, v in doc.items() if "runtime" not in k}
    if isinstance(doc, list):
        return [_strip_runtimes(v) for v in doc]
    return doc


def test_c18_determinism(tmp_path):
    cfg = {"dimension": 1,
           "surface": {"name": "hyperplane", "params": {"half_width": 4.0, "half_time": 16.0}},
           "scales": [0.25, 0.5], "centers": {"rule": "samples", "count": 5}, "seed": 3,
           "params": {"dyadic_levels": [0, 4]}, "suite": ["adr", "beta", "dyadic"]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    t0 = time.perf_counter()
    values = []
    for i in range(2):
        out = tmp_path / f"report{i}.json"
        subprocess.run([sys.executable, "-m", "pgmt.cli", "run", "--config", str(path), "--out", str(out)],
                       check=True, capture_output=True)
        doc = json.loads(out.read_text())
        values.append(json.dumps(_strip_runtimes(doc["checks"]), sort_keys=True).encode())
    same = values[0] == values[1]
    record(18, same, f"identical check values: {same}", time.perf_counter() - t0, 10)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
