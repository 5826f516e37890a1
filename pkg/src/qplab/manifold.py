"""Local unstable manifold of A x {0}: Q(x), the graph field F, V-hat.

Construction follows the Lyapunov-Perron picture: Q(x) is the improper
cocycle integral whose graph gives the unstable fiber directions, the chart
is grown by shooting Hamiltonian trajectories off the linear fibers and
matching their endpoints to tubular grid points, and V-hat accumulates the
running cost along those trajectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.optimize import root

from .errors import (
    ChartFailureError,
    ConditioningError,
    DecayFailureError,
    DomainError,
    TruncationError,
)
from .hamiltonian import hamiltonian, hamiltonian_rhs
from .linearization import ManifoldFrame
from .systems import DynamicalSystem, Equilibrium, LimitCycle, integrate_flow


@dataclass(frozen=True)
class QForm:
    x: np.ndarray
    Q: np.ndarray
    E_basis: np.ndarray
    T_Q: float
    tail_bound: float


# dense periodic interpolants of limit cycles, keyed by the cycle object;
# the backward base orbit of an attracting cycle is dynamically unstable,
# so the Q quadrature reads base points off this spline instead of
# integrating them
_CYCLE_ORBIT_CACHE: dict = {}


def _cycle_orbit_spline(system: DynamicalSystem, cycle: LimitCycle,
                        n_dense: int = 2048) -> CubicSpline:
    key = id(cycle)
    if key not in _CYCLE_ORBIT_CACHE:
        ts = np.linspace(0.0, cycle.period, n_dense, endpoint=False)
        traj = integrate_flow(system, cycle.anchor, (0.0, cycle.period),
                              tol=1e-13, t_eval=ts, check_domain=False)
        th = np.concatenate([ts, [cycle.period]])
        pts = np.vstack([traj.states, traj.states[:1]])
        _CYCLE_ORBIT_CACHE[key] = CubicSpline(th, pts, bc_type="periodic")
    return _CYCLE_ORBIT_CACHE[key]


def compute_Q(system: DynamicalSystem, frame: ManifoldFrame, attractor=None,
              tol: float = 1e-12, T_cap: float = 200.0) -> QForm:
    """Q(x) = 2 int_{-inf}^0 Psi(x.s, -s) A(x.s) (Psi^T)^-1(x, s) P^T(x) ds.

    The integrand is propagated by the joint ODE system for
    R = Psi(x,-tau)^{-1} and K = (Psi^T)^{-1}(x,-tau); the tail beyond the
    truncation horizon is bounded by the contraction rates.  For limit
    cycles the (unstable) backward base orbit is read off a dense periodic
    interpolant, so pass the attractor when x lies on a cycle.
    """
    d = system.dim
    x = frame.x
    Pt = frame.P.T
    gap = frame.beta_star - frame.beta0
    C0 = 2.0 * np.linalg.norm(system.A(x) @ Pt) + 1.0
    T_Q = min(T_cap, np.log(C0 / tol) / gap)

    if isinstance(attractor, LimitCycle):
        spl = _cycle_orbit_spline(system, attractor)
        T = attractor.period
        d2 = np.sum((attractor.samples - x) ** 2, axis=1)
        th0 = float(attractor.sample_times[int(np.argmin(d2))])

        def base(tau):
            return spl(np.mod(th0 - tau, T))
    else:
        def base(tau):
            return x

    def rhs(tau, z):
        y = base(tau)
        R = z[:d * d].reshape(d, d)
        K = z[d * d:2 * d * d].reshape(d, d)
        J = system.jac_b(y)
        dR = R @ J
        dK = J.T @ K
        dQ = 2.0 * R @ system.A(y) @ K @ Pt
        return np.concatenate([dR.ravel(), dK.ravel(), dQ.ravel()])

    z0 = np.concatenate([np.eye(d).ravel(), np.eye(d).ravel(),
                         np.zeros(d * d)])
    res = solve_ivp(rhs, (0.0, T_Q), z0, method="DOP853", rtol=1e-12,
                    atol=1e-13)
    if res.status != 0:
        raise TruncationError(f"Q quadrature failed: {res.message}")
    zT = res.y[:, -1]
    R = zT[:d * d].reshape(d, d)
    K = zT[d * d:2 * d * d].reshape(d, d)
    tail_rate = np.linalg.norm(2.0 * R @ system.A(base(T_Q)) @ K @ Pt)
    tail = tail_rate / gap
    if T_Q >= T_cap and tail > tol:
        raise TruncationError(
            f"Q tail {tail:.2e} above tol {tol:.2e} at horizon {T_cap}")
    Q = zT[2 * d * d:].reshape(d, d)
    return QForm(x=x, Q=Q, E_basis=frame.E_basis(), T_Q=T_Q, tail_bound=tail)


def grad_F_on_M(qform: QForm, frame: ManifoldFrame) -> np.ndarray:
    """The matrix with gradF y = 0 on T_x M and gradF (Q q) = q on E(x)."""
    d = frame.dim
    E = qform.E_basis
    QE = qform.Q @ E
    # conditioning of the restriction Q|_E
    s = np.linalg.svd(E.T @ qform.Q @ E, compute_uv=False)
    if s[-1] <= 0 or s[0] / s[-1] > 1e8:
        raise ConditioningError(
            f"Q restricted to E(x) has condition {s[0] / max(s[-1], 1e-300):.2e}")
    B = np.column_stack([frame.tangent, QE])
    C = np.column_stack([np.zeros((d, frame.manifold_dim)), E])
    return C @ np.linalg.inv(B)


# ---------------------------------------------------------------------------
# Chart geometry


@dataclass
class ChartGridSpec:
    n_phase: int = 96      # samples along the cycle (ignored for equilibria)
    n_offset: int = 33     # transverse samples (odd; includes the attractor)
    seed_amplitude: float = 1e-3
    match_tol: float = 1e-9
    ivp_tol: float = 1e-11


class UnstableChart:
    """Sampled graph field F on a tubular neighbourhood of the attractor.

    Concrete geometry differs between equilibria (Cartesian grid around the
    fixed point) and limit cycles (phase x normal-offset grid); evaluation,
    persistence, and diagnostics share this interface.
    """

    def __init__(self, kind, attractor, radii, positions, F_values, V_values,
                 phase_values, valid, grid_info, gradF_on_M, frames_x,
                 H_residuals):
        self.kind = kind                  # "equilibrium" | "cycle"
        self.attractor = attractor
        self.radii = radii                # (r0, r1, r2)
        self.positions = positions        # (..., d)
        self.F_values = F_values
        self.V_values = V_values
        self.phase_values = phase_values  # asymptotic phase (cycle: offsets)
        self.valid = valid
        self.grid_info = grid_info
        self.gradF_on_M = gradF_on_M      # (n_phase, d, d) or (1, d, d)
        self.frames_x = frames_x
        self.H_residuals = H_residuals
        self._build_interpolators()

    # -- geometry ----------------------------------------------------------

    def _build_interpolators(self):
        gi = self.grid_info
        if self.kind == "equilibrium":
            xs, ys = gi["x1"], gi["x2"]
            self._F_splines = [RectBivariateSpline(xs, ys, self.F_values[..., c])
                               for c in range(2)]
            self._V_spline = RectBivariateSpline(xs, ys, self.V_values)
        else:
            th, et = gi["theta"], gi["eta"]
            T = gi["period"]
            # periodic padding in theta
            npad = 4
            th_ext = np.concatenate([th[-npad:] - T, th, th[:npad] + T])

            def pad(a):
                return np.concatenate([a[-npad:], a, a[:npad]], axis=0)

            self._F_splines = [
                RectBivariateSpline(th_ext, et, pad(self.F_values[..., c]))
                for c in range(2)]
            self._V_spline = RectBivariateSpline(th_ext, et,
                                                 pad(self.V_values))
            self._phase_spline = RectBivariateSpline(
                th_ext, et, pad(self.phase_values))
            # smooth cycle representation for tubular coordinates
            th_c = np.concatenate([gi["cycle_thetas"],
                                   [gi["cycle_thetas"][0] + T]])
            pts = np.vstack([gi["cycle_points"], gi["cycle_points"][:1]])
            self._cycle_spline = CubicSpline(th_c, pts, bc_type="periodic")
            # gradF interpolation along the cycle
            gf = np.concatenate([self.gradF_on_M,
                                 self.gradF_on_M[:1]], axis=0)
            self._gradF_spline = CubicSpline(
                th_c[:len(gf)], gf, bc_type="periodic")

    def cycle_point(self, theta):
        return self._cycle_spline(np.mod(theta, self.grid_info["period"]))

    def cycle_tangent(self, theta):
        v = self._cycle_spline(np.mod(theta, self.grid_info["period"]), 1)
        return v / np.linalg.norm(v)

    def cycle_normal(self, theta):
        t = self.cycle_tangent(theta)
        return np.array([-t[1], t[0]]) * self.grid_info["normal_sign"]

    def tubular_coords(self, x):
        """(theta, eta) for a cycle chart; (x - x*) for an equilibrium."""
        x = np.asarray(x, dtype=float)
        if self.kind == "equilibrium":
            return x - self.attractor.x_star
        gi = self.grid_info
        T = gi["period"]
        # coarse phase from the dense table, then Newton on the spline
        tab = gi["cycle_points"]
        j = int(np.argmin(np.sum((tab - x) ** 2, axis=1)))
        th = gi["cycle_thetas"][j]
        for _ in range(6):
            c = self._cycle_spline(np.mod(th, T))
            dc = self._cycle_spline(np.mod(th, T), 1)
            d2c = self._cycle_spline(np.mod(th, T), 2)
            g = (x - c) @ dc
            dg = -dc @ dc + (x - c) @ d2c
            if abs(dg) < 1e-14:
                break
            step = -g / dg
            th += np.clip(step, -0.2 * T, 0.2 * T)
            if abs(step) < 1e-14:
                break
        th = float(np.mod(th, T))
        c = self._cycle_spline(th)
        eta = float((x - c) @ self.cycle_normal(th))
        return th, eta

    def manifold_distance(self, x):
        if self.kind == "equilibrium":
            return float(np.linalg.norm(np.asarray(x) - self.attractor.x_star))
        _, eta = self.tubular_coords(x)
        return abs(eta)

    def region_radius(self, region):
        return {"O0": self.radii[0], "O1": self.radii[1],
                "O2": self.radii[2]}[region]

    def contains(self, x, region="O0"):
        return self.manifold_distance(x) <= self.region_radius(region)

    # -- field evaluation --------------------------------------------------

    def F_at(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "equilibrium":
            return np.array([s(x[0], x[1])[0, 0] for s in self._F_splines])
        th, eta = self.tubular_coords(x)
        return np.array([s(th, eta)[0, 0] for s in self._F_splines])

    def V_at(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "equilibrium":
            return float(self._V_spline(x[0], x[1])[0, 0])
        th, eta = self.tubular_coords(x)
        return float(self._V_spline(th, eta)[0, 0])

    def pi_at(self, x):
        """Asymptotic phase: the attractor point whose backward orbit the
        trajectory through (x, F(x)) shadows."""
        if self.kind == "equilibrium":
            return np.asarray(self.attractor.x_star, dtype=float)
        th, eta = self.tubular_coords(x)
        dphase = float(self._phase_spline(th, eta)[0, 0])
        return self.cycle_point(th + dphase)

    def gradF_at_phase(self, theta=0.0):
        if self.kind == "equilibrium":
            return self.gradF_on_M[0]
        return self._gradF_spline(np.mod(theta, self.grid_info["period"]))

    def gradF_at(self, x, h=None):
        """Interpolated Jacobian of F by spline differentiation."""
        x = np.asarray(x, dtype=float)
        if self.kind == "equilibrium":
            return np.array(
                [[s(x[0], x[1], dx=1)[0, 0] for s in self._F_splines],
                 [s(x[0], x[1], dy=1)[0, 0] for s in self._F_splines]]).T
        # chain rule through the tubular coordinates, by finite differences
        # of the interpolated field (robust against curvature terms)
        h = h or 1e-5
        G = np.zeros((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            G[:, k] = (self.F_at(x + e) - self.F_at(x - e)) / (2 * h)
        return G

    # -- sampling helpers --------------------------------------------------

    def sample_positions(self):
        return self.positions.reshape(-1, 2)[self.valid.ravel()]

    def sample_F(self):
        return self.F_values.reshape(-1, 2)[self.valid.ravel()]

    def boundary_points(self, region="O2", n=256):
        r = self.region_radius(region)
        if self.kind == "equilibrium":
            ang = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
            c = np.asarray(self.attractor.x_star, dtype=float)
            return c + r * np.column_stack([np.cos(ang), np.sin(ang)])
        T = self.grid_info["period"]
        ths = np.linspace(0.0, T, n // 2, endpoint=False)
        pts = []
        for sgn in (+1.0, -1.0):
            for th in ths:
                pts.append(self.cycle_point(th) + sgn * r * self.cycle_normal(th))
        return np.array(pts)

    # -- persistence -------------------------------------------------------

    def save(self, prefix):
        header = {
            "kind": self.kind,
            "radii": list(self.radii),
            "grid_info": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                          for k, v in self.grid_info.items()},
            "attractor": ("equilibrium" if self.kind == "equilibrium"
                          else "cycle"),
        }
        with open(f"{prefix}.json", "w") as fh:
            json.dump(header, fh, indent=1)
        np.savez(f"{prefix}.npz", positions=self.positions,
                 F_values=self.F_values, V_values=self.V_values,
                 phase_values=self.phase_values, valid=self.valid,
                 gradF_on_M=self.gradF_on_M, frames_x=self.frames_x,
                 H_residuals=self.H_residuals)

    @classmethod
    def load(cls, prefix, attractor):
        with open(f"{prefix}.json") as fh:
            header = json.load(fh)
        arrs = np.load(f"{prefix}.npz")
        gi = {}
        for k, v in header["grid_info"].items():
            gi[k] = np.asarray(v, dtype=float) if isinstance(v, list) else v
        return cls(header["kind"], attractor, tuple(header["radii"]),
                   arrs["positions"], arrs["F_values"], arrs["V_values"],
                   arrs["phase_values"], arrs["valid"].astype(bool), gi,
                   arrs["gradF_on_M"], arrs["frames_x"],
                   arrs["H_residuals"])


# ---------------------------------------------------------------------------
# Chart construction by fiber shooting


def _shoot(system, y0, p0, tau, ivp_tol):
    """Forward phase-flow for time tau >= 0 with running cost quadrature.

    Returns (x(tau), p(tau), int_0^tau p.Ap dt)."""
    d = system.dim
    base = hamiltonian_rhs(system)

    def rhs(sig, z):
        dz = base(sig, z[:2 * d])
        p = z[d:2 * d]
        cost = p @ system.A(z[:d]) @ p
        return tau * np.concatenate([dz, [cost]])

    z0 = np.concatenate([y0, p0, [0.0]])
    res = solve_ivp(rhs, (0.0, 1.0), z0, method="DOP853", rtol=ivp_tol,
                    atol=ivp_tol)
    if res.status != 0:
        return None
    z = res.y[:, -1]
    return z[:d], z[d:2 * d], z[2 * d]


def _solve_fiber_point(system, target, seed_fn, z_guess, ivp_tol, match_tol):
    """Newton-match a fiber shot to `target`.

    seed_fn(z) -> (y0, p0, V0, tau); unknowns z are chart-specific (phase
    and flight time for cycles, fiber angle and flight time for equilibria).
    """

    def residual(z):
        y0, p0, V0, tau = seed_fn(z)
        if tau < 0.0 or tau > 60.0:
            return np.full(2, 1e3 + abs(tau))
        out = _shoot(system, y0, p0, tau, ivp_tol)
        if out is None:
            return np.full(2, 1e3)
        return out[0] - target

    sol = root(residual, z_guess, method="hybr",
               options={"xtol": 1e-13, "maxfev": 200})
    r = residual(sol.x)
    if not np.all(np.isfinite(r)) or np.linalg.norm(r) > match_tol:
        return None
    y0, p0, V0, tau = seed_fn(sol.x)
    x_end, p_end, cost = _shoot(system, y0, p0, tau, ivp_tol)
    return sol.x, p_end, V0 + cost, tau


def _extend_equilibrium_chart(system, attractor, frames, qforms, radius,
                              grid: ChartGridSpec):
    frame, qform = frames[0], qforms[0]
    x_star = np.asarray(attractor.x_star, dtype=float)
    gradF0 = grad_F_on_M(qform, frame)
    n = grid.n_offset
    if n % 2 == 0:
        n += 1
    xs = np.linspace(-radius, radius, n)
    X1, X2 = np.meshgrid(xs, xs, indexing="ij")
    positions = np.stack([x_star[0] + X1, x_star[1] + X2], axis=-1)
    F = np.zeros((n, n, 2))
    V = np.zeros((n, n))
    phase = np.zeros((n, n))
    valid = np.ones((n, n), dtype=bool)
    Hres = np.zeros((n, n))
    rho = grid.seed_amplitude
    Q = qform.Q

    def seed_fn(z):
        alpha, tau = z
        q = rho * np.array([np.cos(alpha), np.sin(alpha)])
        y0 = x_star + Q @ q
        V0 = 0.5 * q @ Q @ q
        return y0, q, V0, tau

    # initial guesses from the exact linearized unstable flow e^{G tau}
    # with G = 2 A gradF + grad b at the fixed point: the expansion is
    # generally anisotropic, so a single-rate estimate misplaces tau badly
    from scipy.linalg import expm
    from scipy.optimize import brentq
    G_lin = 2.0 * system.A(x_star) @ gradF0 + system.jac_b(x_star)

    def cold_guess(v):
        def g(tau):
            q = np.linalg.solve(Q, expm(-G_lin * tau) @ v)
            return np.log(np.linalg.norm(q) / rho)
        hi = 1.0
        while g(hi) > 0.0 and hi < 64.0:
            hi *= 2.0
        if g(0.0) <= 0.0 or hi >= 64.0:
            return None
        tau0 = brentq(g, 0.0, hi, xtol=1e-8)
        q0 = np.linalg.solve(Q, expm(-G_lin * tau0) @ v)
        return np.array([np.arctan2(q0[1], q0[0]), max(tau0, 0.05)])

    # march outward so each point warm-starts from an inner neighbour
    order = np.argsort(np.hypot(X1.ravel(), X2.ravel()))
    solved = {}
    for flat in order:
        i, j = np.unravel_index(flat, (n, n))
        v = positions[i, j] - x_star
        dist = np.linalg.norm(v)
        if dist < 2.0 * rho:
            # linear range: the fiber map is identity to O(rho^2)
            F[i, j] = gradF0 @ v
            V[i, j] = 0.5 * v @ gradF0 @ v
            continue
        guesses = []
        for di, dj in ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1),
                       (1, -1), (-1, 1)):
            if (i + di, j + dj) in solved:
                guesses.append(np.array(solved[(i + di, j + dj)]))
                break
        cg = cold_guess(v)
        if cg is not None:
            guesses.append(cg)
        out = None
        for guess in guesses:
            out = _solve_fiber_point(system, positions[i, j], seed_fn, guess,
                                     grid.ivp_tol, grid.match_tol)
            if out is not None:
                break
        if out is None:
            valid[i, j] = False
            continue
        z, p_end, Vval, tau = out
        solved[(i, j)] = z
        F[i, j] = p_end
        V[i, j] = Vval
        Hres[i, j] = abs(hamiltonian(system, positions[i, j], p_end))

    frac_bad = 1.0 - valid.mean()
    if frac_bad > 0.05:
        raise ChartFailureError(
            f"{100 * frac_bad:.1f}% of chart points failed to converge")
    radii = (radius, 0.7 * radius, 0.5 * radius)
    gi = {"x1": x_star[0] + xs, "x2": x_star[1] + xs}
    return UnstableChart("equilibrium", attractor, radii, positions, F, V,
                         phase, valid, gi, gradF0[None, :, :],
                         np.array([x_star]), Hres)


def _extend_cycle_chart(system, attractor, frames, qforms, radius,
                        grid: ChartGridSpec):
    cycle: LimitCycle = attractor
    T = cycle.period
    n_th = grid.n_phase
    n_et = grid.n_offset
    if n_et % 2 == 0:
        n_et += 1

    # dense, high-accuracy cycle table for tubular coordinates
    n_dense = 1024
    th_dense = np.linspace(0.0, T, n_dense, endpoint=False)
    dense = integrate_flow(system, cycle.anchor, (0.0, T), tol=1e-12,
                           t_eval=th_dense, check_domain=False)
    cyc_pts = dense.states

    # frames/qforms sampled at the cycle sample times
    th_frames = np.asarray(cycle.sample_times, dtype=float)
    e_dirs = []
    w_dirs = []
    kappas = []
    gradFs = []
    prev = None
    for fr, qf in zip(frames, qforms):
        e = qf.E_basis[:, 0]
        tau_vec = fr.tangent[:, 0]
        nrm = np.array([-tau_vec[1], tau_vec[0]])
        w = qf.Q @ e
        # orient fibers consistently along the cycle
        if prev is not None and e @ prev < 0:
            e, w = -e, -w
        prev = e
        e_dirs.append(e)
        w_dirs.append(w)
        kappas.append(e @ qf.Q @ e)
        gradFs.append(grad_F_on_M(qf, fr))
    e_dirs = np.array(e_dirs)
    w_dirs = np.array(w_dirs)
    kappas = np.array(kappas)
    gradFs = np.array(gradFs)

    # normal orientation: +1 if the oriented fiber displacement w points
    # along the rotated tangent at theta=0
    tau0 = frames[0].tangent[:, 0]
    n0 = np.array([-tau0[1], tau0[0]])
    normal_sign = 1.0

    def periodic_spline(vals):
        th_c = np.concatenate([th_frames, [th_frames[0] + T]])
        v = np.concatenate([vals, vals[:1]], axis=0)
        return CubicSpline(th_c, v, bc_type="periodic")

    e_spl = periodic_spline(e_dirs)
    w_spl = periodic_spline(w_dirs)
    kappa_spl = periodic_spline(kappas)
    cyc_spl = CubicSpline(np.concatenate([th_dense, [T]]),
                          np.vstack([cyc_pts, cyc_pts[:1]]),
                          bc_type="periodic")

    def cyc_at(s):
        return cyc_spl(np.mod(s, T))

    def normal_at(s):
        v = cyc_spl(np.mod(s, T), 1)
        t = v / np.linalg.norm(v)
        return np.array([-t[1], t[0]]) * normal_sign

    rho = grid.seed_amplitude
    rate = frames[0].beta_star

    th_grid = np.linspace(0.0, T, n_th, endpoint=False)
    et_grid = np.linspace(-radius, radius, n_et)
    k0 = n_et // 2  # eta = 0 row
    positions = np.zeros((n_th, n_et, 2))
    F = np.zeros((n_th, n_et, 2))
    V = np.zeros((n_th, n_et))
    phase = np.zeros((n_th, n_et))
    valid = np.ones((n_th, n_et), dtype=bool)
    Hres = np.zeros((n_th, n_et))

    for j, th in enumerate(th_grid):
        for k in range(n_et):
            positions[j, k] = cyc_at(th) + et_grid[k] * normal_at(th)

    # sign convention: does +eta displacement correspond to +e fibers?
    w0 = w_spl(0.0)
    plus_sign = 1.0 if (w0 @ normal_at(0.0)) > 0 else -1.0

    def make_seed_fn(sgn):
        def seed_fn(z):
            s, tau = z
            e = e_spl(np.mod(s, T))
            e = e / np.linalg.norm(e)
            w = w_spl(np.mod(s, T))
            q = sgn * rho * e
            y0 = cyc_at(s) + sgn * rho * w
            V0 = 0.5 * rho * rho * float(kappa_spl(np.mod(s, T)))
            return y0, q, V0, tau
        return seed_fn

    for j, th in enumerate(th_grid):
        for half in (+1, -1):
            ks = (range(k0 + 1, n_et) if half > 0
                  else range(k0 - 1, -1, -1))
            sgn = plus_sign * (1.0 if half > 0 else -1.0)
            seed_fn = make_seed_fn(sgn)
            guess = None
            prev_eta = None
            for k in ks:
                eta = et_grid[k]
                tgt = positions[j, k]
                # the endpoint sits near phase s + tau, so the cold guess
                # aims the seed phase backward from the target phase
                wmag = np.linalg.norm(w_spl(th))
                tau_c = max(0.05, np.log(abs(eta) / (rho * wmag)) / rate)
                cold = np.array([th - tau_c, tau_c])
                if guess is None:
                    guesses = [cold]
                else:
                    dtau = np.log(abs(eta) / abs(prev_eta)) / rate
                    guesses = [np.array([guess[0] - dtau, guess[1] + dtau]),
                               cold]
                out = None
                for gz in guesses:
                    out = _solve_fiber_point(system, tgt, seed_fn, gz,
                                             grid.ivp_tol, grid.match_tol)
                    if out is not None:
                        break
                if out is None:
                    valid[j, k] = False
                    guess = None
                    prev_eta = None
                    continue
                z, p_end, Vval, tau = out
                guess = np.array(z)
                prev_eta = eta
                F[j, k] = p_end
                V[j, k] = Vval
                dph = np.mod(z[0] + z[1] - th, T)
                if dph > T / 2:
                    dph -= T
                phase[j, k] = dph
                Hres[j, k] = abs(hamiltonian(system, tgt, p_end))

    frac_bad = 1.0 - valid.mean()
    if frac_bad > 0.05:
        raise ChartFailureError(
            f"{100 * frac_bad:.1f}% of chart points failed to converge")

    radii = (radius, 0.7 * radius, 0.5 * radius)
    gi = {"theta": th_grid, "eta": et_grid, "period": T,
          "cycle_thetas": th_dense, "cycle_points": cyc_pts,
          "normal_sign": normal_sign}
    return UnstableChart("cycle", attractor, radii, positions, F, V, phase,
                         valid, gi, gradFs, np.array([f.x for f in frames]),
                         Hres)


def extend_chart(system: DynamicalSystem, attractor, frames, qforms,
                 radius: float = 0.5,
                 grid: Optional[ChartGridSpec] = None) -> UnstableChart:
    """Grow the graph field F on a tubular neighbourhood of the attractor.

    Each off-manifold grid point x is matched by Newton shooting from seeds
    (x_hat + rho Q q, rho q) on the linear fiber approximation of the
    unstable manifold; invalid points (failed matches) are flagged, and more
    than 5% of them is a chart failure.
    """
    grid = grid or ChartGridSpec()
    if isinstance(attractor, Equilibrium):
        return _extend_equilibrium_chart(system, attractor, frames, qforms,
                                         radius, grid)
    if isinstance(attractor, LimitCycle):
        return _extend_cycle_chart(system, attractor, frames, qforms,
                                   radius, grid)
    raise TypeError("chart construction needs an equilibrium or limit cycle")


# ---------------------------------------------------------------------------
# Chart consumers


def loop_integral(chart: UnstableChart, loop, samples_per_unit=400) -> float:
    """Circulation of F around a closed polyline inside O1."""
    loop = np.asarray(loop, dtype=float)
    if loop.ndim != 2:
        raise ValueError("loop must be an (m, d) polyline")
    if np.linalg.norm(loop[0] - loop[-1]) > 1e-12:
        loop = np.vstack([loop, loop[:1]])
    for p in loop:
        if not chart.contains(p, "O1"):
            raise DomainError("loop leaves the O1 chart region")
    # composite Gauss-Legendre on each segment
    gx, gw = np.polynomial.legendre.leggauss(6)
    total = 0.0
    for a, b in zip(loop[:-1], loop[1:]):
        seg = b - a
        L = np.linalg.norm(seg)
        if L == 0.0:
            continue
        nsub = max(1, int(np.ceil(L * samples_per_unit / 6)))
        for m in range(nsub):
            u0, u1 = m / nsub, (m + 1) / nsub
            for xi, wi in zip(gx, gw):
                u = 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * xi
                x = a + u * seg
                total += wi * 0.5 * (u1 - u0) * (chart.F_at(x) @ seg)
    return float(total)


def hatV(system: DynamicalSystem, chart: UnstableChart, x,
         dist_tol: float = 1e-3, T_max: float = 200.0) -> float:
    """Backward accumulated cost from (x, F(x)) down to the attractor.

    Integrates the phase flow backward, accumulating p.Ap, until the
    trajectory is within dist_tol of the attractor; a local quadratic tail
    (error O(dist_tol^3)) closes the remaining gap.  The default threshold
    is deliberately moderate: error transverse to the unstable manifold
    grows at the normal rate backward in time, so driving the distance to
    machine level ejects the orbit before it gets there.
    """
    x = np.asarray(x, dtype=float)
    if not chart.contains(x, "O0"):
        raise DomainError("point outside the chart neighbourhood O0")
    d = system.dim

    def quadratic_tail(x_end):
        if chart.kind == "equilibrium":
            pi_pt = np.asarray(chart.attractor.x_star, dtype=float)
            G = chart.gradF_at_phase()
        else:
            th, _ = chart.tubular_coords(x_end)
            pi_pt = chart.cycle_point(th)
            G = chart.gradF_at_phase(th)
        dvec = x_end - pi_pt
        return float(0.5 * dvec @ G @ dvec)

    # already inside the tail region: the terminal event would start
    # negative and never fire, so close with the local quadratic directly
    if chart.manifold_distance(x) <= dist_tol:
        return quadratic_tail(x)
    p = chart.F_at(x)
    base = hamiltonian_rhs(system)

    def rhs(t, z):
        dz = base(t, z[:2 * d])
        pp = z[d:2 * d]
        return np.concatenate([dz, [pp @ system.A(z[:d]) @ pp]])

    def near_event(t, z):
        return chart.manifold_distance(z[:d]) - dist_tol
    near_event.terminal = True
    near_event.direction = -1

    z0 = np.concatenate([x, p, [0.0]])
    res = solve_ivp(rhs, (0.0, -T_max), z0, method="DOP853", rtol=1e-12,
                    atol=1e-13, events=[near_event])
    if res.status != 1:
        raise DecayFailureError(
            "backward trajectory did not decay to the attractor "
            f"(final distance {chart.manifold_distance(res.y[:d, -1]):.2e})")
    z_end = res.y[:, -1]
    cost = -z_end[2 * d]  # quadrature ran backward in time
    return cost + quadratic_tail(z_end[:d])


def hessian_on_M(chart: UnstableChart, frame: ManifoldFrame) -> np.ndarray:
    """Hessian of the quasi-potential on the attractor: equals gradF there."""
    if chart.kind == "equilibrium":
        return chart.gradF_at_phase()
    th, _ = chart.tubular_coords(frame.x)
    return chart.gradF_at_phase(th)


def cross_validate_hessian(system, chart, frame, delta=0.015,
                           tol=1e-2) -> float:
    """Max deviation between gradF on M and second differences of hatV."""
    H = hessian_on_M(chart, frame)
    d = frame.dim
    x0 = frame.x
    Hfd = np.zeros((d, d))

    def Vh(y):
        return hatV(system, chart, y)

    V0 = Vh(x0)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = delta
        Hfd[i, i] = (Vh(x0 + ei) - 2 * V0 + Vh(x0 - ei)) / delta ** 2
    for i in range(d):
        for j in range(i + 1, d):
            ei, ej = np.zeros(d), np.zeros(d)
            ei[i] = delta
            ej[j] = delta
            v = (Vh(x0 + ei + ej) - Vh(x0 + ei - ej)
                 - Vh(x0 - ei + ej) + Vh(x0 - ei - ej)) / (4 * delta ** 2)
            Hfd[i, j] = Hfd[j, i] = v
    dev = float(np.max(np.abs(Hfd - 0.5 * (H + H.T))))
    if dev > tol:
        raise ChartFailureError(
            f"Hessian cross-validation mismatch {dev:.2e} exceeds {tol}")
    return dev
