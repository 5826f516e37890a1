import json

import numpy as np
import pytest

from qplab.cli import (
    CRITERIA,
    ScenarioConfig,
    export_artifact,
    main,
    run,
    verify,
)
from qplab.errors import ConfigError, DependencyError, UnknownScenarioError
from qplab.systems import list_scenarios


def _write_cfg(tmp_path, **fields):
    cfg = {"scenario": "ou-1d", "output_dir": str(tmp_path / "out"),
           "eps_ladder": [0.7, 0.55]}
    cfg.update(fields)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


# -- config schema ----------------------------------------------------------


def test_config_defaults_filled():
    cfg = ScenarioConfig.from_dict({"scenario": "ou"})
    assert cfg.bounds == ((-0.7, 0.7), (-0.7, 0.7))
    assert cfg.grid_shape == (64, 64)
    assert cfg.chart_radius == 0.5


def test_config_overrides_win():
    cfg = ScenarioConfig.from_dict({"scenario": "ou", "seed": 1},
                                   {"seed": 7, "output_dir": "x"})
    assert cfg.seed == 7
    assert cfg.output_dir == "x"


def test_config_rejects_unknown_scenario():
    with pytest.raises(UnknownScenarioError):
        ScenarioConfig.from_dict({"scenario": "lorenz-96"})


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"scenario": "ou", "grid_sahpe": [8, 8]})


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"scenario": "ou",
                                  "eps_ladder": [0.5, -0.1]})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"scenario": "ou",
                                  "bounds": [[1.0, -1.0], [0.0, 1.0]]})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"scenario": "ou",
                                  "grid_shape": [0, 64]})


def test_config_json_roundtrip(tmp_path):
    cfg = ScenarioConfig.from_dict({"scenario": "hopf", "seed": 3})
    p = tmp_path / "c.json"
    cfg.to_json(p)
    back = ScenarioConfig.from_json(p)
    assert back == cfg


# -- exit codes -------------------------------------------------------------


def test_unknown_scenario_exits_2(tmp_path):
    p = _write_cfg(tmp_path, scenario="lorenz-96")
    assert main(["run", "--config", str(p)]) == 2


def test_malformed_config_exits_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["run", "--config", str(p)]) == 2


def test_unknown_stage_exits_2(tmp_path):
    p = _write_cfg(tmp_path)
    assert main(["run", "--config", str(p), "--stages", "frobnicate"]) == 2


def test_unknown_suite_exits_2(tmp_path):
    p = _write_cfg(tmp_path)
    assert main(["verify", "--config", str(p), "nonsense"]) == 2


def test_bad_thread_env_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("QPLAB_THREADS", "many")
    p = _write_cfg(tmp_path)
    assert main(["run", "--config", str(p), "--stages", "fokker-planck"]) \
        == 2


def test_thread_cap_accepted(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("QPLAB_THREADS", "1")
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out.split()
    assert out == list_scenarios()


# -- stages and artifacts ---------------------------------------------------


def test_fp_stage_writes_densities(tmp_path):
    p = _write_cfg(tmp_path)
    assert main(["run", "--config", str(p), "--stages", "fokker-planck"]) \
        == 0
    out = tmp_path / "out"
    index = json.loads((out / "density_index.json").read_text())
    assert [e["eps"] for e in index] == [0.7, 0.55]
    data = np.loadtxt(out / "density_0.csv", delimiter=",", skiprows=1)
    assert data.shape[1] == 2
    assert data[:, 1].min() > 0.0
    # cell masses integrate to one
    h = 6.0 / index[0]["shape"][0]
    assert abs(data[:, 1].sum() * h - 1.0) <= 1e-8


def test_run_without_verify_lists_all_criteria(tmp_path):
    p = _write_cfg(tmp_path)
    main(["run", "--config", str(p), "--stages", "fokker-planck"])
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    ids = [c["id"] for c in report["criteria"]]
    assert ids == [cid for cid, _, _, _ in CRITERIA]
    assert len(ids) == len(set(ids)) == 11
    assert all(c["status"] == "not-selected" for c in report["criteria"])


def test_rerun_same_seed_identical_manifest(tmp_path):
    p = _write_cfg(tmp_path)
    manifests = []
    for _ in range(2):
        assert main(["run", "--config", str(p),
                     "--stages", "fokker-planck"]) == 0
        manifests.append(json.loads((tmp_path / "out"
                                     / "manifest.json").read_text()))
    assert manifests[0] == manifests[1]


def test_export_density_roundtrip(tmp_path):
    p = _write_cfg(tmp_path)
    main(["run", "--config", str(p), "--stages", "fokker-planck"])
    dest = tmp_path / "exported.csv"
    assert main(["export", "--config", str(p), "density-0",
                 "--out", str(dest)]) == 0
    assert dest.read_bytes() == (tmp_path / "out"
                                 / "density_0.csv").read_bytes()


def test_export_missing_artifact(tmp_path):
    cfg = ScenarioConfig.from_dict({"scenario": "ou",
                                    "output_dir": str(tmp_path / "o")})
    with pytest.raises(DependencyError, match="quasipotential"):
        export_artifact(cfg, "field")
    with pytest.raises(ConfigError):
        export_artifact(cfg, "blueprints")


# -- verification suites ----------------------------------------------------


def test_verify_empty_cache_dependency_error(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"scenario": "ou",
                             "output_dir": str(tmp_path / "o")}))
    assert main(["verify", "--config", str(p), "structural"]) == 1
    err = capsys.readouterr().err
    assert "quasipotential" in err
    # the partial bundle is still written, with the failure marked
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    entry = [c for c in report["criteria"] if c["id"] == 11][0]
    assert entry["status"] == "error"
    assert "quasipotential" in entry["message"]


def test_verify_not_applicable_marked(tmp_path):
    cfg = ScenarioConfig.from_dict({"scenario": "ou-1d",
                                    "output_dir": str(tmp_path / "o")})
    bundle = verify(cfg, "exit-rate")
    by_id = {c["id"]: c for c in bundle.criteria}
    assert by_id[7]["status"] == "pass"
    assert by_id[1]["status"] == "not-selected"
    assert bundle.all_pass


def test_verify_exit_rate_extrapolation(tmp_path):
    cfg = ScenarioConfig.from_dict({"scenario": "ou-1d",
                                    "output_dir": str(tmp_path / "o")})
    bundle = verify(cfg, "exit-rate")
    entry = [c for c in bundle.criteria if c["id"] == 7][0]
    assert entry["status"] == "pass"
    assert abs(entry["measured"]["extrapolated"] - 2.0) <= 0.3
    assert (tmp_path / "o" / "manifest.json").is_file()


@pytest.mark.slow
def test_verify_thermo_suite(tmp_path, capsys):
    p = _write_cfg(tmp_path)
    assert main(["verify", "--config", str(p), "thermo"]) == 0
    out = capsys.readouterr().out
    assert "criterion 10 [pass]" in out
    assert (tmp_path / "out" / "thermo.csv").is_file()


@pytest.mark.slow
def test_run_ldp_suite_emits_table(tmp_path):
    out = tmp_path / "out"
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"scenario": "ou", "output_dir": str(out)}))
    assert main(["run", "--config", str(p),
                 "--stages", "fokker-planck"]) == 0
    bundle = verify(ScenarioConfig.from_json(p), "ldp")
    entry = [c for c in bundle.criteria if c["id"] == 6][0]
    assert entry["status"] == "pass"
    table = np.loadtxt(out / "ldp_table.csv", delimiter=",", skiprows=1)
    assert table.shape == (3, 3)
    assert np.all(np.diff(table[:, 1]) < 0.0)
