import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qplab.errors import UnknownScenarioError, WrongAttractorTypeError
from qplab.systems import (
    Domain,
    builtin_scenario,
    find_limit_cycle,
    flow_map,
    integrate_flow,
    list_scenarios,
    load_scenario,
)


def _check_jacobian_consistency(system, pts, rtol=1e-5):
    h = 1e-6
    for x in pts:
        J = system.jac_b(x)
        Jfd = np.zeros_like(J)
        for k in range(system.dim):
            e = np.zeros(system.dim)
            e[k] = h
            Jfd[:, k] = (system.b(x + e) - system.b(x - e)) / (2 * h)
        assert np.allclose(J, Jfd, rtol=rtol, atol=1e-7)


@pytest.mark.parametrize("name", list_scenarios())
def test_scenario_jacobians_and_diffusion(name, rng):
    system, _ = builtin_scenario(name)
    pts = rng.uniform(-1.0, 1.0, size=(8, system.dim))
    _check_jacobian_consistency(system, pts)
    for x in pts:
        A = system.A(x)
        assert np.allclose(A, A.T)
        assert np.min(np.linalg.eigvalsh(A)) > 0
        assert np.allclose(A @ system.A_inv(x), np.eye(system.dim),
                           atol=1e-12)
        # dA against central differences of A
        dA = system.dA(x)
        hh = 1e-5
        for k in range(system.dim):
            e = np.zeros(system.dim)
            e[k] = hh
            fd = (system.A(x + e) - system.A(x - e)) / (2 * hh)
            assert np.allclose(dA[k], fd, atol=1e-6)


def test_ou_flow_closed_form(ou):
    system, _ = ou
    traj = integrate_flow(system, [1.0, 0.0], (0.0, 1.0), tol=1e-10)
    assert np.allclose(traj.states[-1], [np.exp(-1.0), 0.0], atol=1e-8)


def test_equilibrium_is_fixed(ou):
    system, attr = ou
    traj = integrate_flow(system, attr.x_star, (0.0, 3.0), tol=1e-10)
    assert np.max(np.abs(traj.states)) < 1e-9


def test_hopf_radial_closed_form(hopf):
    system, _ = hopf
    r0, t = 2.0, 5.0
    # r(t) = (1 + (r0^-2 - 1) e^{-2t})^{-1/2}
    r_exact = (1.0 + (r0 ** -2 - 1.0) * np.exp(-2.0 * t)) ** -0.5
    x1 = flow_map(system, [r0, 0.0], t, tol=1e-12)
    assert abs(np.linalg.norm(x1) - r_exact) < 1e-7


def test_flow_semigroup(ou, rng):
    system, _ = ou
    tol = 1e-10
    for _ in range(5):
        x = rng.uniform(-1.5, 1.5, size=2)
        s, t = rng.uniform(0.0, 2.5, size=2)
        a = flow_map(system, flow_map(system, x, s, tol=tol), t, tol=tol)
        b = flow_map(system, x, s + t, tol=tol)
        assert np.linalg.norm(a - b) <= 10 * max(tol, 1e-9)


def test_hopf_disk_positively_invariant(hopf, rng):
    system, _ = hopf
    for _ in range(4):
        x = rng.uniform(-1.2, 1.2, size=2)
        traj = integrate_flow(system, x, (0.0, 10.0), tol=1e-9)
        assert not traj.truncated


def test_domain_exit_flag(ou):
    system, _ = ou
    # reversed drift pushes outward: integrate backward in time from a point
    traj = integrate_flow(system, [2.0, 0.0], (0.0, -2.0), tol=1e-9)
    assert traj.truncated


def test_find_limit_cycle_hopf():
    system, _ = builtin_scenario("hopf")
    cyc = find_limit_cycle(system, [1.5, 0.0], tol=1e-10)
    assert abs(np.linalg.norm(cyc.anchor) - 1.0) < 1e-8
    assert abs(cyc.period - 2.0 * np.pi) < 1e-6


def test_find_limit_cycle_rejects_gradient_system():
    system, _ = builtin_scenario("gradient-double-well")
    with pytest.raises(WrongAttractorTypeError):
        find_limit_cycle(system, [0.6, 0.3])


@pytest.mark.slow
def test_vanderpol_period():
    system, _ = builtin_scenario("vanderpol", mu=1.0)
    cyc = find_limit_cycle(system, [2.0, 0.0], tol=1e-10)
    assert abs(cyc.period - 6.6633) < 1e-3


def test_limit_cycle_invariance():
    system, cyc = builtin_scenario("hopf")
    for x in cyc.samples[::16]:
        x1 = flow_map(system, x, cyc.period, tol=1e-12)
        assert np.linalg.norm(x1 - x) < 1e-6


def test_builtin_scenario_contracts():
    system, attr = builtin_scenario("ou")
    assert np.allclose(system.b([0.3, -0.2]), [-0.3, 0.2])
    assert np.allclose(attr.x_star, 0.0)
    system, cyc = builtin_scenario("hopf", omega=1.0)
    x = np.array([0.5, 0.25])
    r2 = x @ x
    assert np.allclose(system.b(x),
                       [x[0] * (1 - r2) - x[1], x[1] * (1 - r2) + x[0]])
    assert abs(np.linalg.norm(cyc.samples, axis=1).max() - 1.0) < 1e-12
    with pytest.raises(UnknownScenarioError):
        builtin_scenario("unknown")


def test_equilibrium_drift_small():
    for name in ("ou", "gradient-double-well", "maier-stein"):
        system, attr = builtin_scenario(name)
        assert np.linalg.norm(system.b(attr.x_star)) <= 1e-10


def test_load_scenario_json(tmp_path):
    doc = {"name": "hopf", "params": {"omega": 2.0},
           "domain": {"kind": "disk", "bounds": [[0.0, 0.0], 3.0]}}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    system, cyc = load_scenario(str(path))
    assert system.params["omega"] == 2.0
    assert system.domain.kind == "disk"
    assert abs(cyc.period - np.pi) < 1e-12


def test_trajectory_csv_roundtrip(ou, tmp_path):
    system, _ = ou
    traj = integrate_flow(system, [1.0, 0.5], (0.0, 1.0), tol=1e-9)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape[1] == 3
    assert np.allclose(data[:, 0], traj.times)


def test_domain_validation():
    with pytest.raises(ValueError):
        Domain("annulus", (np.zeros(2), 2.0, 1.0))
    with pytest.raises(ValueError):
        Domain("box", ((0.0, np.inf),))


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_cycle_projection_lands_on_cycle(x, y):
    _, cyc = builtin_scenario("hopf")
    p = cyc.project(np.array([x, y]))
    assert abs(np.linalg.norm(p) - 1.0) < 5e-3
