import json

import numpy as np
import pytest
from click.testing import CliRunner

from pgmt.cli import main
from pgmt.harness import ConfigError, RunConfig, calibrated, load_calibration, run_suite


def _plane_config(**over):
    cfg = {"dimension": 1,
           "surface": {"name": "hyperplane", "params": {"half_width": 4.0, "half_time": 16.0}},
           "scales": [0.25, 0.5], "centers": {"rule": "samples", "count": 5}, "seed": 3,
           "params": {"dyadic_levels": [0, 4]}, "suite": ["adr", "beta", "dyadic"]}
    cfg.update(over)
    return cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict(_plane_config(colour="blue"))


def test_unknown_param_rejected():
    cfg = _plane_config()
    cfg["params"]["depth"] = 3
    with pytest.raises(ConfigError):
        RunConfig.from_dict(cfg)


def test_seed_required():
    cfg = _plane_config()
    del cfg["seed"]
    with pytest.raises(ConfigError, match="seed"):
        RunConfig.from_dict(cfg)


def test_a1_range():
    cfg = _plane_config()
    cfg["params"]["a1"] = 0.6
    with pytest.raises(ConfigError, match="a1"):
        RunConfig.from_dict(cfg)


def test_dependencies_expand():
    cfg = RunConfig.from_dict(_plane_config(suite="bigpieces"))
    assert cfg.suite_list() == ["carleson", "corkscrew", "bigpieces"]
    tree = _plane_config(suite="regularity")
    tree["surface"] = {"name": "tree", "params": {"K": 6}}
    assert RunConfig.from_dict(tree).suite_list() == ["carleson", "corkscrew", "bigpieces", "regularity"]


def test_config_hash_is_stable():
    a = RunConfig.from_dict(_plane_config())
    b = RunConfig.from_dict(json.loads(json.dumps(_plane_config())))
    assert a.hash() == b.hash()
    assert a.hash() != RunConfig.from_dict(_plane_config(seed=4)).hash()


def test_calibration_entries_have_commands():
    cal = load_calibration()["constants"]
    for name, entry in cal.items():
        assert "value" in entry and "command" in entry, name
    assert calibrated("depth_budget") == cal["depth_budget"]["value"]


def test_hyperplane_checks_pass():
    rep = run_suite(RunConfig.from_dict(_plane_config()))
    assert rep.all_passed, [c.name for c in rep.checks if not c.passed]
    names = [c.name for c in rep.checks]
    assert "adr.full" in names and "dyadic.properties" in names


def test_invalid_scale_aborts_naming_check_adr():
    rep = run_suite(RunConfig.from_dict(_plane_config(scales=[0.25, 3.0], suite="adr")))
    first = rep.checks[0]
    assert not first.passed and "check_adr" in first.error
    assert len(rep.checks) == 1


def test_report_is_deterministic():
    cfg = RunConfig.from_dict(_plane_config())
    a = run_suite(cfg).to_dict(runtimes=False)
    b = run_suite(cfg).to_dict(runtimes=False)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["config_hash"] == cfg.hash()


def test_cli_run(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(_plane_config()))
    out = tmp_path / "report.json"
    res = CliRunner().invoke(main, ["run", "--config", str(path), "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "PASS adr.full" in res.output
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == 1 and doc["checks"]


def test_cli_run_invalid_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(_plane_config(bogus=1)))
    res = CliRunner().invoke(main, ["run", "--config", str(path), "--out", str(tmp_path / "r.json")])
    assert res.exit_code == 2


def test_cli_gen_and_export_beta(tmp_path):
    runner = CliRunner()
    cloud = tmp_path / "tree.csv"
    res = runner.invoke(main, ["gen", "--surface", "tree", "--K", "4", "--pitch", "0.0625",
                               "--out", str(cloud)])
    assert res.exit_code == 0, res.output
    assert cloud.stat().st_size > 0
    betas = tmp_path / "beta.csv"
    res = runner.invoke(main, ["export-beta", "--surface", "hyperplane", "--scale", "0.25",
                               "--scale", "0.5", "--centers", "3", "--out", str(betas)])
    assert res.exit_code == 0, res.output
    rows = betas.read_text().strip().splitlines()
    assert len(rows) >= 6
