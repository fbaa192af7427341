"""Command line interface: ``pgmt run | gen | export-beta | calibrate``."""
from __future__ import annotations

import json
import sys

import click
import numpy as np

from .harness import ConfigError, RunConfig, build_surface, pick_centers, run_suite


@click.group()
def main():
    """Numerical checks for parabolic uniform rectifiability."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--suite", default=None, help="override the config's suite selection (comma separated)")
@click.option("--threads", default=None, type=int)
def run(config_path, out, suite, threads):
    """Run the configured verification suites and write a JSON report."""
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
        if suite is not None:
            raw["suite"] = suite.split(",") if "," in suite else suite
        cfg = RunConfig.from_dict(raw)
    except (ConfigError, json.JSONDecodeError) as exc:
        click.echo(f"invalid config: {exc}", err=True)
        sys.exit(2)
    report = run_suite(cfg, threads=threads)
    report.write(out)
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        extra = f"  ({c.error})" if c.error else ""
        click.echo(f"{status} {c.name}{extra}")
    sys.exit(0 if report.all_passed else 1)


def _surface_from_options(name, pitch, K, seed, dimension):
    surf = {"name": name, "params": {}}
    if pitch is not None:
        surf["params"]["pitch"] = pitch
    if name == "tree":
        surf["params"]["K"] = K
    return RunConfig.from_dict({"dimension": dimension, "surface": surf, "scales": [1.0],
                                "centers": {"rule": "samples", "count": 1}, "seed": seed})


@main.command()
@click.option("--surface", "name", required=True,
              type=click.Choice(["hyperplane", "two_graph", "tree", "random_lip"]))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--pitch", default=None, type=float)
@click.option("--K", "K", default=10, type=int, help="tree generations")
@click.option("--seed", default=0, type=int)
@click.option("--dimension", default=1, type=int)
def gen(name, out, pitch, K, seed, dimension):
    """Generate a surface and write its weighted point cloud as CSV."""
    from .surfaces import save_point_cloud

    cfg = _surface_from_options(name, pitch, K, seed, dimension)
    surface = build_surface(cfg)
    save_point_cloud(surface, out)
    click.echo(f"{len(surface)} samples -> {out}")


@main.command("export-beta")
@click.option("--surface", "name", required=True,
              type=click.Choice(["hyperplane", "two_graph", "tree", "random_lip"]))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--scale", "scales", multiple=True, type=float, required=True)
@click.option("--centers", "count", default=10, type=int)
@click.option("--variant", default="beta2", type=click.Choice(["beta2", "beta_inf"]))
@click.option("--pitch", default=None, type=float)
@click.option("--K", "K", default=10, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--dimension", default=1, type=int)
def export_beta(name, out, scales, count, variant, pitch, K, seed, dimension):
    """Flatness coefficients at sampled centres, as CSV."""
    from .flatness import beta2, beta_inf, export_beta_field

    cfg = _surface_from_options(name, pitch, K, seed, dimension)
    cfg.scales = list(scales)
    cfg.centers = {"rule": "samples", "count": count}
    surface = build_surface(cfg)
    fn = beta2 if variant == "beta2" else beta_inf
    res = [fn(surface, c, r) for c in pick_centers(cfg, surface) for r in scales]
    export_beta_field(res, out)
    click.echo(f"{len(res)} values -> {out}")


@main.command()
@click.argument("name")
def calibrate(name):
    """Recompute one frozen constant and print observed and frozen values."""
    from .calibrate import ROUTINES

    if name not in ROUTINES:
        raise click.BadParameter(f"choose from {sorted(ROUTINES)}")
    res = ROUTINES[name]()
    click.echo(json.dumps(res, default=lambda v: float(v) if isinstance(v, np.floating) else str(v)))


if __name__ == "__main__":
    main()
