"""Run configuration, deterministic orchestration of the verification suites
and report emission."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from . import __version__
from .measure import GHFailure
from .pargeo import par_dist
from .topology import SyncFailure
from .surfaces import (GraphFunction, InvariantError, SampledSurface, build_hyperplane,
                       build_parabolic_tree, build_two_graph_example, random_lip_graph,
                       two_graph_psi)

SCHEMA_VERSION = 1

SUITES = ("adr", "beta", "carleson", "dyadic", "corkscrew", "bigpieces", "regularity")
DEPENDENCIES = {"bigpieces": ("carleson", "corkscrew")}

GENERATORS = {
    "hyperplane": {"half_width", "half_time", "pitch"},
    "two_graph": {"half_time", "pitch", "half_width"},
    "tree": {"K", "pitch", "half_width", "time_margin"},
    "random_lip": {"half_time", "pitch", "b", "terms"},
}

TOP_KEYS = {"dimension", "surface", "window", "scales", "centers", "seed", "params", "suite"}
CENTER_KEYS = {"rule", "count", "points"}
PARAM_KEYS = {
    "h", "k_dilate", "N_star", "eps", "C1", "a1", "gamma0", "mu", "m", "depth_budget",
    "M_adr", "R", "p", "dyadic_levels", "carleson_bases", "carleson_subdivisions",
    "adr_bracket", "lip_factor", "c_transfer", "labeling_voxels", "envelope_pitch",
    "regularity_pitch", "transfer_bases", "flatness_center", "contact_tol",
}


class ConfigError(ValueError):
    pass


def load_calibration() -> dict:
    text = resources.files("pgmt").joinpath("calibration.json").read_text()
    return json.loads(text)


def calibrated(name: str):
    return load_calibration()["constants"][name]["value"]


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


@dataclass
class RunConfig:
    dimension: int
    surface: dict
    scales: list
    centers: dict
    seed: int
    params: dict = field(default_factory=dict)
    window: Optional[list] = None
    suite: str = "all"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        _check_keys(d, TOP_KEYS, "config")
        for key in ("dimension", "surface", "scales", "centers", "seed"):
            if key not in d:
                raise ConfigError(f"missing required key {key!r}")
        cfg = cls(d["dimension"], d["surface"], d["scales"], d["centers"], d["seed"],
                  d.get("params", {}), d.get("window"), d.get("suite", "all"))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.dimension not in (1, 2):
            raise ConfigError("dimension must be 1 or 2")
        if not isinstance(self.surface, dict) or "name" not in self.surface:
            raise ConfigError("surface needs a generator name")
        _check_keys(self.surface, {"name", "params"}, "surface")
        name = self.surface["name"]
        if name not in GENERATORS:
            raise ConfigError(f"unknown surface generator {name!r}")
        _check_keys(self.surface.get("params", {}), GENERATORS[name], f"surface.params ({name})")
        if name != "hyperplane" and self.dimension != 1:
            raise ConfigError(f"generator {name!r} is only available in dimension 1")
        if not self.scales or any(not (float(r) > 0) for r in self.scales):
            raise ConfigError("scales must be a nonempty list of positive numbers")
        _check_keys(self.centers, CENTER_KEYS, "centers")
        rule = self.centers.get("rule", "samples")
        if rule not in ("samples", "points"):
            raise ConfigError("centers.rule must be 'samples' or 'points'")
        if rule == "samples" and int(self.centers.get("count", 0)) < 1:
            raise ConfigError("centers.count must be positive")
        if rule == "points":
            pts = np.asarray(self.centers.get("points", []), dtype=float)
            if pts.ndim != 2 or pts.shape[1] != self.dimension + 1:
                raise ConfigError("centers.points must be a list of (n+1)-vectors")
        _check_keys(self.params, PARAM_KEYS, "params")
        p = self.params
        if "eps" in p and not (0 < p["eps"] < 1):
            raise ConfigError("eps must lie in (0, 1)")
        for key in ("h", "k_dilate", "N_star", "C1", "gamma0", "R", "lip_factor", "c_transfer", "contact_tol"):
            if key in p and not (float(p[key]) > 0):
                raise ConfigError(f"{key} must be positive")
        if "a1" in p and not (0 < p["a1"] < 0.5):
            raise ConfigError("a1 must lie in (0, 1/2)")
        if "mu" in p and p["mu"] < 0:
            raise ConfigError("mu must be nonnegative")
        if "M_adr" in p and p["M_adr"] < 1:
            raise ConfigError("M_adr must be at least 1")
        for s in self.suite_list(expand=False):
            if s not in SUITES:
                raise ConfigError(f"unknown suite {s!r}")

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "surface": self.surface, "scales": self.scales,
                "centers": self.centers, "seed": self.seed, "params": self.params,
                "window": self.window, "suite": self.suite}

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def suite_list(self, expand: bool = True) -> list:
        names = self.suite if isinstance(self.suite, list) else [self.suite]
        if "all" in names:
            names = list(SUITES)
        if not expand:
            return names
        deps = dict(DEPENDENCIES)
        if self.surface.get("name") == "tree":
            # the tree is not a graph: regularity profiles the big-piece extension
            deps["regularity"] = ("bigpieces",)
        out, todo = set(), list(names)
        while todo:
            s = todo.pop()
            if s not in out:
                out.add(s)
                todo.extend(deps.get(s, ()))
        return [s for s in SUITES if s in out]


# ---------------------------------------------------------------------------
# report

@dataclass
class CheckRecord:
    name: str
    anchor: str
    expected_source: str
    inputs: dict
    values: dict
    tolerance: object
    passed: bool
    runtime: float
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return _jsonable({"name": self.name, "anchor": self.anchor,
                          "expected_source": self.expected_source, "inputs": self.inputs,
                          "values": self.values, "tolerance": self.tolerance,
                          "passed": self.passed, "runtime": self.runtime, "error": self.error})


@dataclass
class VerificationReport:
    config: RunConfig
    checks: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self, runtimes: bool = True) -> dict:
        checks = [c.to_dict() for c in self.checks]
        if not runtimes:
            for c in checks:
                c.pop("runtime")
        return {"schema_version": SCHEMA_VERSION, "tool_version": __version__,
                "config": self.config.to_dict(), "config_hash": self.config.hash(),
                "checks": checks,
                "summary": {"checks": len(self.checks),
                            "passed": sum(1 for c in self.checks if c.passed),
                            "failed": [c.name for c in self.checks if not c.passed],
                            "all_passed": self.all_passed}}

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if np.isfinite(v) else repr(v)
    return x


class SuiteAbort(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# surfaces and centres

def build_surface(cfg: RunConfig) -> SampledSurface:
    name = cfg.surface["name"]
    kw = dict(cfg.surface.get("params", {}))
    if name == "hyperplane":
        return build_hyperplane(cfg.dimension, **kw)
    if name == "two_graph":
        return build_two_graph_example(**kw)
    if name == "tree":
        K = int(kw.pop("K", 10))
        return build_parabolic_tree(K, **kw)
    return random_lip_graph(cfg.seed, **kw)


def pick_centers(cfg: RunConfig, surface: SampledSurface) -> np.ndarray:
    if cfg.centers.get("rule", "samples") == "points":
        return np.asarray(cfg.centers["points"], dtype=float)
    rng = np.random.default_rng(cfg.seed)
    live = np.flatnonzero(surface.weights > 0)
    P = surface.points[live]
    r = max(float(v) for v in cfg.scales)
    if cfg.window is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in cfg.window)
        live = live[np.all((P >= lo) & (P <= hi), axis=1)]
        P = surface.points[live]
    if surface.window is not None:
        lo = np.asarray(surface.window.lower)
        hi = np.asarray(surface.window.upper)
        m = np.array([3 * r] * surface.n + [9 * r * r])
        ok = np.all((P >= lo + m) & (P <= hi - m), axis=1)
        if ok.any():
            live = live[ok]
    count = min(int(cfg.centers["count"]), live.size)
    return surface.points[np.sort(rng.choice(live, count, replace=False))]


# ---------------------------------------------------------------------------
# suite runner

class _Runner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.report = VerificationReport(cfg)
        self.surface = build_surface(cfg)
        self.centers = pick_centers(cfg, self.surface)
        self.scales = [float(r) for r in cfg.scales]
        self.cal = load_calibration()["constants"]
        self.state = {}

    def param(self, key, default):
        return self.cfg.params.get(key, default)

    def check(self, name: str, anchor: str, source: str, inputs: dict, fn: Callable):
        """Run ``fn`` -> (values, tolerance, passed).  Rejected input aborts the suite."""
        t0 = time.perf_counter()
        try:
            values, tol, ok = fn()
            rec = CheckRecord(name, anchor, source, inputs, values, tol, bool(ok),
                              time.perf_counter() - t0)
        except (InvariantError, ValueError) as exc:
            rec = CheckRecord(name, anchor, source, inputs, {}, None, False,
                              time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
            self.report.checks.append(rec)
            raise SuiteAbort(name) from exc
        except (GHFailure, SyncFailure) as exc:
            # a construction that fails on valid input is a failed check, not an abort
            rec = CheckRecord(name, anchor, source, inputs, {"failed_step": getattr(exc, "step", None)}, None, False,
                              time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
        self.report.checks.append(rec)
        return rec.values

    # -- adr -------------------------------------------------------------
    def suite_adr(self):
        from .measure import check_adr

        name = self.surface.meta.get("generator", self.surface.name)
        bracket = self.param("adr_bracket", None)
        source = "configured"
        if bracket is None and name != "hyperplane":
            entry = self.cal.get(f"adr_bracket_{name}")
            if entry is not None:
                bracket, source = entry["value"], "calibrated"
            else:
                bracket, source = [0.0, float("inf")], "positivity"
        for variant in ("full", "time-forward", "time-backward"):
            if bracket is None:
                # planar measure of Q_r is 2^n r^(n+1), half of it on each time side;
                # cube faces cut sample cells, costing up to 2 resolution / r
                k = 2.0 ** self.surface.n * (1.0 if variant == "full" else 0.5)
                rel = 2.0 * self.surface.resolution / min(self.scales)
                lo, hi, src = k * (1 - rel), k * (1 + 1e-9), "closed-form"
            else:
                lo, hi, src = float(bracket[0]), float(bracket[1]), source

            def run(variant=variant, lo=lo, hi=hi):
                rep = check_adr(self.surface, self.centers, self.scales, variant)
                ok = rep.ratio_min >= lo and rep.ratio_max <= hi and rep.ratio_min > 0
                return ({"ratio_min": rep.ratio_min, "ratio_max": rep.ratio_max,
                         "M_observed": rep.M_observed}, [lo, hi], ok)
            self.check(f"adr.{variant}", "Ahlfors-David regularity of surface measure", src,
                       {"centers": len(self.centers), "scales": self.scales}, run)

    # -- beta ------------------------------------------------------------
    def suite_beta(self):
        from .flatness import comparison_sides

        n = self.surface.n

        def run():
            worst, fails = -np.inf, 0
            for c in self.centers:
                for r in self.scales:
                    a, b = comparison_sides(self.surface, c, r)
                    slack = a - b - 10 * self.surface.resolution / r
                    worst = max(worst, slack)
                    fails += int(slack > 0)
            return {"max_excess": worst, "violations": fails}, "10 resolution / r", fails == 0

        self.check("beta.comparison", f"beta_inf^(n+3) <= 16^(n+3) beta_2(2r)^2 (n={n})",
                   "inequality", {"centers": len(self.centers), "scales": self.scales}, run)

    # -- carleson --------------------------------------------------------
    def suite_carleson(self):
        from .flatness import carleson_norm

        count = int(self.param("carleson_bases", 4))
        r = max(self.scales)
        bases = [(c, r) for c in self.centers[:count]]

        def run():
            rep = carleson_norm(self.surface, bases, int(self.param("carleson_subdivisions", 8)))
            self.state["carleson"] = rep
            v = float(rep.norm_estimate)
            return {"values": rep.values, "norm_estimate": v}, "finite", np.isfinite(v)

        self.check("carleson.norm", "Carleson packing of beta_2^2 dr/r", "finiteness",
                   {"bases": len(bases), "r": r}, run)

    # -- dyadic ----------------------------------------------------------
    def suite_dyadic(self):
        from .dyadic import build_dyadic, check_dyadic_properties

        k0, k1 = self.param("dyadic_levels", [0, 6])

        def run():
            tree = build_dyadic(self.surface, int(k0), int(k1))
            self.state["dyadic"] = tree
            res = check_dyadic_properties(tree)
            return res, "all properties", res["all"]

        self.check("dyadic.properties", "nested dyadic cubes (covering, nesting, diameter, "
                   "containment)", "exhaustive", {"levels": [k0, k1]}, run)

    # -- corkscrew -------------------------------------------------------
    def _p_R(self):
        p = np.asarray(self.param("p", self.centers[0].tolist()), dtype=float)
        R = float(self.param("R", max(self.scales)))
        return p, R

    def suite_corkscrew(self):
        from .pargeo import ParCube, PointST
        from .topology import (chain_constants, find_corkscrews, label_components,
                               sync_via_flatness, sync_via_time_chain, verify_pair)

        p, R = self._p_R()
        vox = int(self.param("labeling_voxels", 64))

        def run_pair():
            lab = label_components(self.surface, ParCube(PointST.from_array(p), R), R / vox)
            pair = find_corkscrews(self.surface, lab, p, R, mode="weak")
            if pair is None:
                return {"found": False}, "pair exists", False
            v = verify_pair(self.surface, lab, pair, p, R)
            self.state["pair"] = pair
            return {"pair": pair.to_dict(), "verify": v}, "verified", v["all"]

        self.check("corkscrew.weak_pair", "interior/exterior corkscrew cubes", "certificate",
                   {"p": p, "R": R, "voxels": vox}, run_pair)
        gamma0 = float(self.param("gamma0", self.cal["gamma0"]["value"]))
        if self.surface.component_fn is not None:
            a1 = float(self.param("a1", 0.25))
            C1 = float(self.param("C1", 128.0))

            def run_chain():
                res = sync_via_time_chain(self.surface, p, R, gamma0, a1=a1, C1=C1)
                _, bound = chain_constants(gamma0, a1, C1)
                same_t = res.pair.cube1.center.time == res.pair.cube2.center.time
                v = verify_pair(self.surface, None, res.pair, p, R)
                ok = res.steps <= bound and same_t and v["all"]
                return ({"steps": res.steps, "branch": res.branch, "C2": res.C2,
                         "gamma_achieved": res.pair.gamma_achieved, "verify": v},
                        {"step_bound": bound}, ok)

            self.check("corkscrew.time_chain", "time-chain synchronisation step bound", "closed-form",
                       {"p": p, "R": R, "gamma0": gamma0, "a1": a1, "C1": C1}, run_chain)
        else:
            budget = int(self.param("depth_budget", self.cal["depth_budget"]["value"]))
            eps = float(self.param("eps", 0.01))
            kd = float(self.param("k_dilate", 10.0))

            # the flatness route needs a centre on the surface; default is the
            # weighted sample nearest p
            q = self.param("flatness_center", None)
            if q is None:
                P, W = self.surface.points, self.surface.weights
                live = np.flatnonzero(W > 0)
                q = P[live[np.argmin(par_dist(P[live], p[None, :]))]]
            q = np.asarray(q, dtype=float)

            def run_flat():
                res = sync_via_flatness(self.surface, None, None, q, R, eps, budget, k_dilate=kd)
                ok = res.depth <= budget and res.sandwich_max < eps
                return ({"depth": res.depth, "r1": res.r1, "sandwich_max": res.sandwich_max},
                        {"depth_budget": budget, "eps": eps}, ok)

            self.check("corkscrew.flatness", "synchronisation from a flat dyadic cube", "calibrated",
                       {"p": q, "R": R, "eps": eps, "k_dilate": kd}, run_flat)

    # -- bigpieces -------------------------------------------------------
    def suite_bigpieces(self):
        from .bigpieces import maximal_bad_set, run_big_pieces

        p, R = self._p_R()
        n = self.surface.n
        gen = self.surface.meta.get("generator", self.surface.name)
        M_adr = float(self.param("M_adr", self.cal["M_adr"]["value"].get(gen, 2.0)))
        lip_factor = float(self.param("lip_factor", self.cal["whitney_lip_factor"]["value"]))
        c_transfer = float(self.param("c_transfer", self.cal["c_transfer"]["value"]))
        pitch = float(self.param("envelope_pitch", 2.0 ** -6))
        tb = self.param("transfer_bases", [[-2.0, 1.0], [0.0, 1.0], [2.0, 1.0]])
        transfer_bases = [(np.array([q] * n), r) for q, r in tb]
        car = self.state["carleson"]
        inputs = {"p": p, "R": R, "M_adr": M_adr, "pitch": pitch}

        def run_env():
            h = self.param("h", None)
            h = None if h is None else float(h)
            run = run_big_pieces(self.surface, p, R, car, M_adr=M_adr, h=h, pitch=pitch,
                                 mu=float(self.param("mu", 0.0)), lip_factor=lip_factor,
                                 transfer_bases=transfer_bases, m=int(self.param("m", 12)),
                                 contact_tol=self.param("contact_tol", None))
            self.state["bigpieces"] = run
            env = run.envelope
            gamma = 2.0 ** (-n - 2)
            ok = env.shadow_measure >= gamma and env.lip_measured <= env.h * (1 + 1e-9)
            return ({"shadow_measure": env.shadow_measure, "lip": env.lip_measured, "h": env.h,
                     "contact_shadow_original": run.contact_shadow_original(),
                     "agreement": env.agreement}, {"gamma": gamma}, ok)

        self.check("bigpieces.envelope", "cone envelope contact shadow and Lip bound",
                   "closed-form", inputs, run_env)
        run = self.state["bigpieces"]

        def run_bad():
            N_star = float(self.param("N_star", 4.0))
            bad = maximal_bad_set(run.setup, run.surface, N_star)
            return ({"measure": bad.measure, "markov_bound": bad.markov_bound}, "Markov",
                    bad.measure <= bad.markov_bound * (1 + 1e-9) + 1e-15)

        self.check("bigpieces.bad_set", "maximal-function bad set obeys the weak (1,1) bound",
                   "inequality", {"N_star": self.param("N_star", 4.0)}, run_bad)

        def run_good():
            cert = run.good.certificate()
            ok = all(cert[k] for k in ("projection_le_sigma", "sigma_le_bound", "bound_le_target"))
            return cert, "(eps R / 10)^(n+1)", ok

        self.check("bigpieces.good_set", "Chebyshev bound on the removed part", "exact count",
                   {"eps": run.good.eps}, run_good)

        def run_whitney():
            c = run.extension.certificates
            keys = ("covering", "disjoint", "E_uncovered", "comparability_lower",
                    "comparability_upper", "agrees_on_E", "lip_ok")
            ok = all(c[k] for k in keys) and c["partition_error"] <= 1e-9
            return c, {"partition": 1e-9, "lip_factor": lip_factor}, ok

        self.check("bigpieces.whitney", "Whitney extension certificates", "calibrated",
                   {"b_star": run.envelope.h}, run_whitney)

        def run_transfer():
            tr = run.transfer.to_dict()
            ok = tr["ratio"] <= c_transfer and tr["distance_factor"] <= tr["distance_bound"]
            return tr, {"c_transfer": c_transfer}, ok

        self.check("bigpieces.transfer", "Carleson norm transfer to the extension graph",
                   "calibrated", {"bases": tb}, run_transfer)

    # -- regularity ------------------------------------------------------
    def _graph_function(self):
        """The graph function to profile, its Lip(1,1/2) bound and the bound's source."""
        gen = self.surface.meta.get("generator", self.surface.name)
        pitch = float(self.param("regularity_pitch", 2.0 ** -3))
        if gen == "two_graph":
            T = float(self.surface.time_extent[1])
            g = GraphFunction.from_function(lambda P: two_graph_psi(P[:, -1], 1), [-T], [T], pitch)
            # |sqrt|t| - sqrt|s|| <= |t - s|^(1/2)
            return g, 1.0, "closed-form"
        if self.surface.graph is not None:
            return self.surface.graph, float(self.surface.graph.lip_constant), "generator"
        if gen == "hyperplane":
            lo = np.asarray(self.surface.window.lower)[:-1][: self.cfg.dimension]
            hi = np.asarray(self.surface.window.upper)[:-1][: self.cfg.dimension]
            lo[-1], hi[-1] = self.surface.time_extent
            return GraphFunction.from_function(lambda P: np.zeros(len(P)), lo, hi, pitch), 0.0, "exact"
        if "bigpieces" not in self.state:
            raise InvariantError("regularity of a non-graph surface needs the bigpieces suite")
        run = self.state["bigpieces"]
        c = run.extension.certificates
        return run.extension.psi_ext, float(c["lip_factor"]) * run.envelope.h, "calibrated"

    def suite_regularity(self):
        from .regularity import regularity_profile

        def run():
            g, bound, _ = self._graph_function()
            prof = regularity_profile(g)
            d = prof.to_dict()
            ok = all(np.isfinite(d[k]) for k in ("lip", "bmo", "strichartz"))
            ok = ok and d["lip"] <= bound * (1 + 1e-6) + 1e-6
            return d, {"lip_bound": bound}, ok

        self.check("regularity.profile", "Lip(1,1/2), half time derivative BMO and Strichartz "
                   "functional", "finiteness", {}, run)


def run_suite(config: RunConfig, threads: Optional[int] = None) -> VerificationReport:
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    runner = _Runner(config)
    for name in config.suite_list():
        if name == "bigpieces" and "carleson" not in runner.state:
            runner.report.checks.append(CheckRecord(
                "bigpieces.dependencies", "suite dependencies", "dependency", {}, {}, None, False,
                0.0, "carleson suite did not complete"))
            continue
        try:
            getattr(runner, f"suite_{name}")()
        except SuiteAbort:
            continue
    return runner.report
