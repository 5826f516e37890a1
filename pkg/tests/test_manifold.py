import numpy as np
import pytest

from qplab.errors import (
    ConditioningError,
    DecayFailureError,
    DomainError,
    TruncationError,
)
from qplab.hamiltonian import hamiltonian
from qplab.linearization import floquet_splitting
from qplab.manifold import (
    QForm,
    UnstableChart,
    compute_Q,
    cross_validate_hessian,
    grad_F_on_M,
    hatV,
    hessian_on_M,
    loop_integral,
)


def rotation(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


# -- Q form -----------------------------------------------------------------


def test_ou_Q_is_identity(ou):
    system, attr = ou
    frame = floquet_splitting(system, attr)[0]
    qf = compute_Q(system, frame)
    # 2 int_{-inf}^0 e^{2s} ds = 1 per direction
    assert np.allclose(qf.Q, np.eye(2), atol=1e-9)
    assert qf.tail_bound < 1e-12
    assert np.isfinite(qf.T_Q)


def test_hopf_Q_oracle(hopf, hopf_frames, hopf_qforms):
    system, cyc = hopf
    f0, q0 = hopf_frames[0], hopf_qforms[0]
    n = f0.x / np.linalg.norm(f0.x)
    # radial Q component: 2 int e^{4s} ds = 1/2
    assert abs(n @ q0.Q @ n - 0.5) <= 1e-8
    # tangent directions are annihilated by construction
    assert np.linalg.norm(q0.Q @ f0.tangent[:, 0]) <= 1e-8
    # Q is symmetric on the fiber span E (1-dimensional here: trivially so),
    # and rotation-covariant for this rotationally symmetric flow
    for k in (8, 24, 40):
        R = rotation(2.0 * np.pi * k / len(hopf_frames))
        assert np.linalg.norm(hopf_qforms[k].Q - R @ q0.Q @ R.T) <= 1e-7


def test_hopf_seed_identity(hopf, hopf_frames, hopf_qforms):
    # H(xhat + Q q, q) = O(|q|^3) on the fiber: the quadratic terms cancel
    system, _ = hopf
    rho = 1e-3
    for f, qf in zip(hopf_frames[::16], hopf_qforms[::16]):
        e = qf.E_basis[:, 0]
        q = rho * e
        seed_x = f.x + qf.Q @ q
        assert abs(hamiltonian(system, seed_x, q)) <= 1e-8


def test_grad_F_on_M(hopf, hopf_frames, hopf_qforms):
    system, _ = hopf
    for k in (0, 16, 48):
        f, qf = hopf_frames[k], hopf_qforms[k]
        G = grad_F_on_M(qf, f)
        ev = np.sort(np.linalg.eigvals(G).real)
        assert abs(ev[0]) <= 1e-8
        assert abs(ev[1] - 2.0) <= 1e-6
        # kernel contains the drift direction, inverse relation on ran Q
        assert np.linalg.norm(G @ system.b(f.x)) <= 1e-6
        q = qf.E_basis[:, 0]
        assert np.linalg.norm(G @ (qf.Q @ q) - q) <= 1e-6


def test_grad_F_conditioning_guard(hopf, hopf_frames):
    f = hopf_frames[0]
    degenerate = QForm(x=f.x, Q=np.zeros((2, 2)), E_basis=f.E_basis(),
                       T_Q=1.0, tail_bound=0.0)
    with pytest.raises(ConditioningError):
        grad_F_on_M(degenerate, f)


def test_Q_truncation_guard(hopf, hopf_frames):
    system, cyc = hopf
    with pytest.raises(TruncationError):
        compute_Q(system, hopf_frames[0], cyc, tol=1e-12, T_cap=1.0)


# -- charts: OU oracle (F = x, V = |x|^2/2 exactly) -------------------------


def test_ou_chart_exact_field(ou, ou_chart, rng):
    system, _ = ou
    assert ou_chart.valid.all()
    for _ in range(10):
        x = rng.uniform(-0.45, 0.45, size=2)
        assert np.allclose(ou_chart.F_at(x), x, atol=1e-6)
        assert abs(ou_chart.V_at(x) - 0.5 * x @ x) <= 1e-6
        assert np.allclose(ou_chart.pi_at(x), 0.0)
    G = ou_chart.gradF_at([0.2, -0.1])
    assert np.allclose(G, np.eye(2), atol=1e-5)


def test_ou_hatV(ou, ou_chart):
    system, _ = ou
    x = np.array([0.3, -0.35])
    assert abs(hatV(system, ou_chart, x) - 0.5 * x @ x) <= 1e-6
    assert hatV(system, ou_chart, [0.0, 0.0]) == 0.0


# -- charts: double well (V equals the potential) ---------------------------


def test_double_well_chart(double_well, dw_chart):
    from qplab.systems import double_well_potential
    system, attr = double_well
    assert dw_chart.valid.all()
    for x in ([1.3, 0.2], [0.7, -0.3], [1.0, 0.4]):
        v = double_well_potential(x)
        assert abs(dw_chart.V_at(x) - v) <= 1e-5
        # gradient system: F = grad U
        x1, y1 = x
        gradU = np.array([x1 ** 3 - x1, y1])
        assert np.allclose(dw_chart.F_at(x), gradU, atol=1e-5)
    H = hessian_on_M(dw_chart, floquet_splitting(system, attr)[0])
    assert np.allclose(np.sort(np.linalg.eigvals(H).real), [1.0, 2.0],
                       atol=1e-6)


# -- charts: Hopf cycle -----------------------------------------------------


def test_hopf_chart_field_oracle(hopf, hopf_chart):
    system, _ = hopf
    assert hopf_chart.valid.all()
    # F = r(r^2 - 1) e_r from the closed-form quasi-potential (1-r^2)^2/4
    for r, a in ((1.2, 0.0), (0.8, 1.1), (1.35, -2.0), (0.6, 3.0)):
        e_r = np.array([np.cos(a), np.sin(a)])
        x = r * e_r
        assert np.allclose(hopf_chart.F_at(x), r * (r * r - 1.0) * e_r,
                           atol=1e-4)
        assert abs(hopf_chart.V_at(x) - (1.0 - r * r) ** 2 / 4.0) <= 1e-4


def test_hopf_chart_H_residual(hopf, hopf_chart, rng):
    system, _ = hopf
    # interpolated field stays on the zero level of H
    worst = 0.0
    for _ in range(40):
        r = rng.uniform(0.55, 1.45)
        a = rng.uniform(0.0, 2.0 * np.pi)
        x = r * np.array([np.cos(a), np.sin(a)])
        worst = max(worst, abs(hamiltonian(system, x, hopf_chart.F_at(x))))
    assert worst <= 1e-6
    assert hopf_chart.H_residuals.max() <= 1e-8


def test_hopf_hatV(hopf, hopf_chart):
    system, _ = hopf
    assert abs(hatV(system, hopf_chart, [1.3, 0.0]) - 0.119025) <= 1e-4
    assert abs(hatV(system, hopf_chart, [0.0, 0.6]) - 0.1024) <= 1e-4


def test_hopf_isochrons_are_radial(hopf, hopf_chart):
    # theta-dot is independent of r, so the asymptotic phase of (r, a)
    # in polar coordinates is the cycle point at angle a
    for r, a in ((1.3, 0.0), (0.7, 2.0), (1.1, -1.2)):
        pi = hopf_chart.pi_at(r * np.array([np.cos(a), np.sin(a)]))
        assert np.allclose(pi, [np.cos(a), np.sin(a)], atol=1e-6)


def test_loop_integrals_vanish(hopf_chart):
    ang = np.linspace(0.0, 2.0 * np.pi, 72, endpoint=False)
    circle = np.column_stack([np.cos(ang), np.sin(ang)])
    # a loop encircling the cycle and a contractible one
    assert abs(loop_integral(hopf_chart, 1.1 * circle)) <= 1e-5
    small = np.array([1.05, 0.0]) + 0.2 * circle
    assert abs(loop_integral(hopf_chart, small)) <= 1e-5


def test_loop_outside_domain_rejected(hopf_chart):
    ang = np.linspace(0.0, 2.0 * np.pi, 32, endpoint=False)
    with pytest.raises(DomainError):
        loop_integral(hopf_chart, 1.6 * np.column_stack([np.cos(ang),
                                                         np.sin(ang)]))


def test_hessian_on_cycle(hopf, hopf_chart, hopf_frames):
    system, _ = hopf
    H = hessian_on_M(hopf_chart, hopf_frames[0])
    ev = np.sort(np.linalg.eigvals(H).real)
    assert abs(ev[0]) <= 1e-6
    assert abs(ev[1] - 2.0) <= 1e-3
    dev = cross_validate_hessian(system, hopf_chart, hopf_frames[0])
    assert dev <= 1e-2


def test_hatV_guards(hopf, hopf_chart):
    system, _ = hopf
    with pytest.raises(DomainError):
        hatV(system, hopf_chart, [1.8, 0.0])
    with pytest.raises(DecayFailureError):
        hatV(system, hopf_chart, [1.3, 0.0], T_max=0.5)


def test_chart_roundtrip(hopf, hopf_chart, tmp_path):
    system, cyc = hopf
    prefix = str(tmp_path / "chart")
    hopf_chart.save(prefix)
    back = UnstableChart.load(prefix, cyc)
    x = np.array([1.2, 0.3])
    assert np.allclose(back.F_at(x), hopf_chart.F_at(x), atol=1e-12)
    assert abs(back.V_at(x) - hopf_chart.V_at(x)) <= 1e-12
    assert back.radii == hopf_chart.radii


def test_boundary_points(hopf_chart, ou_chart):
    pts = hopf_chart.boundary_points("O2", n=64)
    for p in pts:
        assert abs(hopf_chart.manifold_distance(p) - 0.25) <= 1e-8
    pts = ou_chart.boundary_points("O2", n=32)
    assert np.allclose(np.linalg.norm(pts, axis=1), 0.25, atol=1e-12)
