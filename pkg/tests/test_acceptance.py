"""Acceptance suite: one test per criterion, one printed verdict line each.

Heavy shared artifacts (charts, graph fields) come from the session
fixtures; everything else is computed at the scale the criterion states.
Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines.
"""

import time

import numpy as np
import pytest

from qplab.cli import (
    ArtifactCache,
    ScenarioConfig,
    evaluate_criterion,
    stage_fokker_planck,
)


def _cfg(scenario, tmp_path_factory, **kw):
    out = tmp_path_factory.mktemp(f"acc-{scenario}")
    return ScenarioConfig.from_dict(
        {"scenario": scenario, "output_dir": str(out), **kw})


def _verdict(cid, result, elapsed, cap=None):
    status = "PASS" if result["passed"] else "FAIL"
    line = f"criterion {cid:2d}: {status}  ({elapsed:.0f}s)  " \
           f"{result['measured']}"
    print(line)
    assert result["passed"], line
    if cap is not None:
        assert elapsed <= cap, f"criterion {cid} took {elapsed:.0f}s " \
                               f"(cap {cap:.0f}s)"


@pytest.fixture(scope="module")
def hopf_cache(tmp_path_factory, hopf, hopf_graph_field):
    # a wider chart than the session fixture: the hatV route of criterion
    # 2 has to reach r = 0.4 and r = 1.6
    from qplab.cli import _build_chart
    cfg = _cfg("hopf", tmp_path_factory)
    cache = ArtifactCache(cfg.output_dir)
    frames, qforms, chart = _build_chart(cfg)
    cache.mem.update({"chart": chart, "field": hopf_graph_field,
                      "frames": frames, "qforms": qforms})
    return cfg, cache


@pytest.fixture(scope="module")
def dw_cache(tmp_path_factory, double_well, dw_chart):
    from qplab.quasipotential import FieldGrid, field_from_chart
    system, _ = double_well
    cfg = _cfg("gradient-double-well", tmp_path_factory)
    cache = ArtifactCache(cfg.output_dir)
    grid = FieldGrid(((0.58, 1.42), (-0.42, 0.42)), (96, 96))
    cache.mem["field"] = field_from_chart(system, dw_chart, grid)
    return cfg, cache


@pytest.fixture(scope="module")
def ou_cache(tmp_path_factory, ou, ou_chart):
    from qplab.quasipotential import FieldGrid, field_from_chart
    system, _ = ou
    cfg = _cfg("ou", tmp_path_factory)
    cache = ArtifactCache(cfg.output_dir)
    grid = FieldGrid(((-0.7, 0.7), (-0.7, 0.7)), (64, 64))
    cache.mem["field"] = field_from_chart(system, ou_chart, grid)
    return cfg, cache


def test_criterion_01_gradient_oracle(dw_cache):
    cfg, cache = dw_cache
    t0 = time.monotonic()
    result = evaluate_criterion(1, cfg, cache)
    _verdict(1, result, time.monotonic() - t0, cap=120.0)


def test_criterion_02_three_routes(hopf_cache):
    cfg, cache = hopf_cache
    t0 = time.monotonic()
    result = evaluate_criterion(2, cfg, cache)
    _verdict(2, result, time.monotonic() - t0, cap=300.0)


def test_criterion_03_manifold_structure(hopf_cache):
    cfg, cache = hopf_cache
    t0 = time.monotonic()
    result = evaluate_criterion(3, cfg, cache)
    _verdict(3, result, time.monotonic() - t0)


def test_criterion_04_hje_conservative(hopf_cache):
    cfg, cache = hopf_cache
    t0 = time.monotonic()
    result = evaluate_criterion(4, cfg, cache)
    _verdict(4, result, time.monotonic() - t0)


def test_criterion_05_minimizer_structure(hopf_cache):
    cfg, cache = hopf_cache
    t0 = time.monotonic()
    result = evaluate_criterion(5, cfg, cache)
    _verdict(5, result, time.monotonic() - t0)


def test_criterion_06_ldp_both_systems(ou_cache, hopf_cache):
    t0 = time.monotonic()
    results = {}
    for cfg, cache in (ou_cache, hopf_cache):
        stage_fokker_planck(cfg, cache)
        results[cfg.scenario] = evaluate_criterion(6, cfg, cache)
    combined = {
        "passed": all(r["passed"] for r in results.values()),
        "measured": {k: r["measured"]["sup_errors"]
                     for k, r in results.items()},
    }
    _verdict(6, combined, time.monotonic() - t0, cap=600.0)


def test_criterion_07_exit_rate(ou_cache):
    cfg, cache = ou_cache
    t0 = time.monotonic()
    result = evaluate_criterion(7, cfg, cache)
    _verdict(7, result, time.monotonic() - t0)


def test_criterion_08_equivalence_probe(hopf_cache, dw_cache):
    t0 = time.monotonic()
    r_hopf = evaluate_criterion(8, *hopf_cache)
    r_dw = evaluate_criterion(8, *dw_cache)
    combined = {
        "passed": r_hopf["passed"] and r_dw["passed"],
        "measured": {"hopf": r_hopf["measured"],
                     "double-well": r_dw["measured"]},
    }
    _verdict(8, combined, time.monotonic() - t0)


def test_criterion_09_decomposition_identities(hopf_cache, dw_cache):
    t0 = time.monotonic()
    r_hopf = evaluate_criterion(9, *hopf_cache)
    r_dw = evaluate_criterion(9, *dw_cache)
    combined = {
        "passed": r_hopf["passed"] and r_dw["passed"],
        "measured": {"hopf": r_hopf["measured"],
                     "double-well": r_dw["measured"]},
    }
    _verdict(9, combined, time.monotonic() - t0)


def test_criterion_10_thermodynamics(ou_cache):
    cfg, cache = ou_cache
    t0 = time.monotonic()
    result = evaluate_criterion(10, cfg, cache)
    _verdict(10, result, time.monotonic() - t0)


def test_criterion_11_structural_suite(ou_cache, hopf_cache):
    t0 = time.monotonic()
    r_ou = evaluate_criterion(11, *ou_cache)
    r_hopf = evaluate_criterion(11, *hopf_cache)
    combined = {
        "passed": r_ou["passed"] and r_hopf["passed"],
        "measured": {"ou": r_ou["measured"], "hopf": r_hopf["measured"]},
    }
    _verdict(11, combined, time.monotonic() - t0)
