"""Quasi-potential computation: action minimization and characteristic sweep.

Three independent routes to V meet here: (i) direct minimization of the
discretized action over paths into a target point, (ii) forward integration
of Hamiltonian characteristics seeded on the unstable-manifold chart, and
(iii) the chart's own accumulated cost.  Cross-checking them is the main
verification instrument of the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares, minimize_scalar

from .errors import CoverageError, DomainError, NonConvergenceError
from .hamiltonian import hamiltonian, hamiltonian_rhs, lagrangian
from .manifold import UnstableChart, _cycle_orbit_spline
from .systems import DynamicalSystem, Equilibrium, LimitCycle, integrate_flow


# ---------------------------------------------------------------------------
# Paths and the discrete action


@dataclass
class PathGrid:
    times: np.ndarray      # node times over [-T, 0]
    states: np.ndarray     # (N+1, d), states[-1] = target
    action: float
    converged: bool
    info: dict = field(default_factory=dict)

    @property
    def target(self):
        return self.states[-1]

    def to_csv(self, path):
        d = self.states.shape[1]
        header = "t," + ",".join(f"phi_{i + 1}" for i in range(d))
        np.savetxt(path, np.column_stack([self.times, self.states]),
                   delimiter=",", header=header, comments="")


def graded_times(T: float, n: int, alpha: float = 2.0) -> np.ndarray:
    """Node times on [-T, 0] with spacing shrinking toward t = 0.

    Near the attractor (t -> -T) the path barely moves, so the mesh spends
    its nodes on the active escape segment near t = 0 instead."""
    u = np.linspace(0.0, 1.0, n + 1)
    return -T * (1.0 - u) ** alpha


def pinned_times(T: float, n: int) -> np.ndarray:
    """Two-sided graded mesh for paths with both endpoints pinned."""
    u = np.linspace(0.0, 1.0, n + 1)
    w = u * u * (3.0 - 2.0 * u)
    return -T * (1.0 - w)


def capped_geometric_times(T: float, dt0: float = 0.008,
                           dt_max: float = 0.04,
                           growth: float = 1.04) -> np.ndarray:
    """Geometrically growing steps from t = 0 backward, with a spacing cap.

    Keeps the finest steps above the node-noise floor (differencing across
    ultra-fine steps amplifies optimizer noise) and the coarsest below the
    resolution needed for the rotation of cycle-hugging path tails."""
    dts = []
    t, dt = 0.0, dt0
    while t < T - 1e-12:
        step = min(dt, dt_max, T - t)
        dts.append(step)
        t += step
        dt *= growth
    times = -np.concatenate([[0.0], np.cumsum(dts)])[::-1]
    times[0] = -T
    return times


def action(system: DynamicalSystem, times, states) -> float:
    """Composite midpoint quadrature of the running cost L along the path."""
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    dts = np.diff(times)
    mids = 0.5 * (states[:-1] + states[1:])
    vels = np.diff(states, axis=0) / dts[:, None]
    return float(sum(dt * lagrangian(system, m, v)
                     for dt, m, v in zip(dts, mids, vels)))


def attractor_project(system: DynamicalSystem, attractor, x) -> np.ndarray:
    """Closest attractor point, spline-refined for cycles."""
    x = np.asarray(x, dtype=float)
    if isinstance(attractor, Equilibrium):
        return np.asarray(attractor.x_star, dtype=float)
    spl = _cycle_orbit_spline(system, attractor)
    T = attractor.period
    d2 = np.sum((attractor.samples - x) ** 2, axis=1)
    th = float(attractor.sample_times[int(np.argmin(d2))])
    for _ in range(6):
        c = spl(np.mod(th, T))
        dc = spl(np.mod(th, T), 1)
        d2c = spl(np.mod(th, T), 2)
        g = (x - c) @ dc
        dg = -dc @ dc + (x - c) @ d2c
        if abs(dg) < 1e-14:
            break
        th -= g / dg
    return spl(np.mod(th, T))


def _chol_factor(system, x):
    # L with L L^T = A^{-1}(x); residuals r = (1/2) sqrt(dt) L^T (b - v)
    # make the action an exact sum of squares
    return np.linalg.cholesky(system.A_inv(x))


def _segment_residuals(system, times, states):
    dts = np.diff(times)
    mids = 0.5 * (states[:-1] + states[1:])
    vels = np.diff(states, axis=0) / dts[:, None]
    out = np.empty_like(vels)
    const = system.constant_diffusion()
    L0 = _chol_factor(system, mids[0]) if const else None
    for k, (dt, m, v) in enumerate(zip(dts, mids, vels)):
        L = L0 if const else _chol_factor(system, m)
        out[k] = 0.5 * np.sqrt(dt) * (L.T @ (system.b(m) - v))
    return out.ravel()


def _segment_jacobian(system, times, states, n_nodes_free, first_free,
                      extra_block=None):
    """Analytic sparse Jacobian of the segment residuals (constant A only).

    Finite-difference Jacobians cap the achievable optimality around 1e-4,
    which leaves node-level noise large enough to dominate differenced
    diagnostics; the analytic form converges several orders further."""
    d = states.shape[1]
    dts = np.diff(times)
    n_seg = len(dts)
    LT = _chol_factor(system, states[0]).T
    rows = n_seg * d + (d if extra_block is not None else 0)
    J = sparse.lil_matrix((rows, n_nodes_free * d))
    for k in range(n_seg):
        m = 0.5 * (states[k] + states[k + 1])
        c = 0.5 * np.sqrt(dts[k])
        Jb = 0.5 * system.jac_b(m)
        inv = np.eye(d) / dts[k]
        for node, block in ((k, c * (LT @ (Jb + inv))),
                            (k + 1, c * (LT @ (Jb - inv)))):
            col = node - first_free
            if 0 <= col < n_nodes_free:
                J[k * d:(k + 1) * d, col * d:(col + 1) * d] = block
    if extra_block is not None:
        J[n_seg * d:, :d] = extra_block
    return J.tocsr()


def _band_sparsity(n_nodes_free, d, n_segments, extra_rows, first_free):
    """Jacobian sparsity: segment k touches nodes k and k+1."""
    rows = n_segments * d + extra_rows
    cols = n_nodes_free * d
    S = sparse.lil_matrix((rows, cols), dtype=bool)
    for k in range(n_segments):
        for node in (k, k + 1):
            col = node - first_free
            if 0 <= col < n_nodes_free:
                S[k * d:(k + 1) * d, col * d:(col + 1) * d] = True
    if extra_rows:
        S[n_segments * d:, :d] = True
    return S


@dataclass
class PathConfig:
    N: int = 160
    T: float = 15.0
    alpha: float = 2.0
    mesh: str = "graded"           # or "capped": geometric with dt bounds
    dt0: float = 0.008
    dt_max: float = 0.04
    growth: float = 1.04
    kappas: tuple = (1e2, 1e3, 1e4)
    gtol: float = 1e-12
    penalty_target: float = 1e-8   # on dist(phi_0, A)^2
    max_nfev: int = 1000
    init_states: Optional[np.ndarray] = None   # (N+1, d) warm start


def minimize_path(system: DynamicalSystem, attractor, x_target,
                  config: Optional[PathConfig] = None) -> PathGrid:
    """V(x_target) by minimizing the discrete action over paths from A.

    The left endpoint is free; its distance to the attractor is penalized
    with a weight ramped x10 per continuation stage, because admissible
    paths only approach A asymptotically and hard pinning would demand an
    infinite horizon.
    """
    config = config or PathConfig()
    x_target = np.asarray(x_target, dtype=float)
    if not system.domain.contains(x_target):
        raise DomainError("target outside the computational domain")
    d = system.dim
    if config.mesh == "capped":
        times = capped_geometric_times(config.T, config.dt0, config.dt_max,
                                       config.growth)
        N = len(times) - 1
    else:
        N = config.N
        times = graded_times(config.T, N, config.alpha)
    a0 = attractor_project(system, attractor, x_target)

    # target on the attractor: V = 0 with a constant path
    if np.linalg.norm(x_target - a0) <= 1e-12:
        states = np.tile(x_target, (N + 1, 1))
        return PathGrid(times=times, states=states, action=0.0,
                        converged=True, info={"stages": []})

    # smooth ramp from the attractor to the target; for limit cycles the
    # ramp rides the rotation (a chord-shaped guess sits in the wrong
    # winding class and strands the optimizer at spurious local minima,
    # e.g. paths detouring through interior equilibria).  The optimizer is
    # local: when several escape channels exist, a warm start picks one.
    s = (times + config.T) / config.T
    ramp = s * s * (3.0 - 2.0 * s)
    if config.init_states is not None:
        states = np.array(config.init_states, dtype=float)
        if states.shape != (N + 1, d):
            raise ValueError(f"init_states must have shape {(N + 1, d)}")
        states[-1] = x_target
    elif isinstance(attractor, LimitCycle):
        spl = _cycle_orbit_spline(system, attractor)
        Tc = attractor.period
        d2 = np.sum((attractor.samples - x_target) ** 2, axis=1)
        th_t = float(attractor.sample_times[int(np.argmin(d2))])
        for _ in range(6):
            c = spl(np.mod(th_t, Tc))
            dc = spl(np.mod(th_t, Tc), 1)
            g = (x_target - c) @ dc
            dg = -dc @ dc + (x_target - c) @ spl(np.mod(th_t, Tc), 2)
            if abs(dg) > 1e-14:
                th_t -= g / dg
        c_t = spl(np.mod(th_t, Tc))
        tau_t = spl(np.mod(th_t, Tc), 1)
        tau_t /= np.linalg.norm(tau_t)
        n_t = np.array([-tau_t[1], tau_t[0]])
        eta_t = (x_target - c_t) @ n_t
        states = np.empty((N + 1, d))
        for i, t in enumerate(times):
            th = np.mod(th_t + t, Tc)
            ci = spl(th)
            ti = spl(th, 1)
            ti /= np.linalg.norm(ti)
            ni = np.array([-ti[1], ti[0]])
            states[i] = ci + ramp[i] * eta_t * ni
        states[-1] = x_target
    else:
        states = a0 + ramp[:, None] * (x_target - a0)

    S = _band_sparsity(N, d, N, d, first_free=0)

    def pack(st):
        return st[:N].ravel()

    def unpack(z):
        st = np.empty((N + 1, d))
        st[:N] = z.reshape(N, d)
        st[N] = x_target
        return st

    stages = []
    result = None
    const = system.constant_diffusion()
    for kappa in config.kappas:
        def residuals(z, kappa=kappa):
            st = unpack(z)
            pen = np.sqrt(kappa) * (st[0] - attractor_project(
                system, attractor, st[0]))
            return np.concatenate([_segment_residuals(system, times, st),
                                   pen])

        def jacobian(z, kappa=kappa):
            st = unpack(z)
            if isinstance(attractor, Equilibrium):
                P = np.eye(d)
            else:
                # the projection moves tangentially; differentiating the
                # penalty leaves the normal projector
                a = attractor_project(system, attractor, st[0])
                tau = system.b(a)
                tau = tau / np.linalg.norm(tau)
                P = np.eye(d) - np.outer(tau, tau)
            return _segment_jacobian(system, times, st, N, 0,
                                     extra_block=np.sqrt(kappa) * P)

        kw = {"jac": jacobian} if const else {"jac_sparsity": S}
        result = least_squares(residuals, pack(states), method="trf",
                               gtol=config.gtol, xtol=1e-14, ftol=1e-14,
                               max_nfev=config.max_nfev, **kw)
        states = unpack(result.x)
        dist0 = np.linalg.norm(
            states[0] - attractor_project(system, attractor, states[0]))
        stages.append({"kappa": kappa,
                       "action": action(system, times, states),
                       "dist0": dist0,
                       "optimality": float(result.optimality)})
        if dist0 ** 2 <= config.penalty_target:
            break

    # keep the path inside the domain; transient excursions are projected
    for attempt in range(2):
        margins = np.array([system.domain.boundary_distance(x)
                            for x in states])
        if np.all(margins >= 0.0):
            break
        if attempt == 1:
            raise DomainError("minimizing path persistently exits the domain")
        for i in np.flatnonzero(margins < 0.0)[::-1]:
            states[i] = states[i - 1] if i > 0 else a0

    val = action(system, times, states)
    dist0 = stages[-1]["dist0"]
    # a max_nfev stop still counts when the first-order measure is small:
    # the action is flat to second order around the minimizer
    converged = (dist0 ** 2 <= config.penalty_target
                 and (result.status > 0 or result.optimality <= 1e-3))
    path = PathGrid(times=times, states=states, action=val,
                    converged=converged,
                    info={"stages": stages, "dist0": dist0,
                          "optimality": float(result.optimality)})
    if not converged:
        raise NonConvergenceError(
            f"path optimizer stalled (dist0={dist0:.2e}, "
            f"optimality={result.optimality:.2e})", best=path)
    return path


# ---------------------------------------------------------------------------
# Pairwise finite-time cost and equivalence probing


@dataclass
class PairConfig:
    N: int = 100
    T_values: tuple = tuple(1.5 * np.sqrt(2.0) ** k for k in range(9))
    refine: bool = True
    gtol: float = 1e-10
    max_nfev: int = 300
    flow_pass_tol: float = 0.05   # near-pass distance enabling the shortcut


def _pinned_cost(system, y, x, T, N, gtol, max_nfev):
    d = system.dim
    times = pinned_times(T, N)
    # initial guess: forward flow from y, blended into the target
    traj = integrate_flow(system, y, (0.0, T), tol=1e-9, check_domain=False)
    flow = np.array([traj.sol(t + T) for t in times])
    s = (times + T) / T
    blend = s ** 4
    states = flow + blend[:, None] * (x - flow[-1])
    states[0], states[-1] = y, x

    S = _band_sparsity(N - 1, d, N, 0, first_free=1)

    def unpack(z):
        st = np.empty((N + 1, d))
        st[0] = y
        st[1:N] = z.reshape(N - 1, d)
        st[N] = x
        return st

    def residuals(z):
        return _segment_residuals(system, times, unpack(z))

    if system.constant_diffusion():
        kw = {"jac": lambda z: _segment_jacobian(system, times, unpack(z),
                                                 N - 1, 1)}
    else:
        kw = {"jac_sparsity": S}
    res = least_squares(residuals, states[1:N].ravel(), method="trf",
                        gtol=gtol, xtol=1e-12, ftol=1e-12,
                        max_nfev=max_nfev, **kw)
    st = unpack(res.x)
    return action(system, times, st), PathGrid(
        times=times, states=st, action=action(system, times, st),
        converged=res.status > 0, info={"T": T})


def pairwise_cost(system: DynamicalSystem, y, x,
                  config: Optional[PairConfig] = None,
                  return_path: bool = False):
    """V(y, x): infimum over finite-time paths from y to x.

    The horizon is searched over a geometric ladder and optionally refined
    by bounded scalar minimization around the best rung (phase alignment on
    limit cycles makes the cost oscillate in T).
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    config = config or PairConfig()
    if np.linalg.norm(x - y) <= 1e-13:
        times = pinned_times(config.T_values[0], config.N)
        p = PathGrid(times=times, states=np.tile(x, (config.N + 1, 1)),
                     action=0.0, converged=True, info={"T": times[0]})
        return (0.0, p) if return_path else 0.0

    # shortcut: when the forward flow from y nearly passes through x the
    # infimum is (numerically) zero and one solve at the passage time
    # suffices; this is the common case when probing equivalence classes
    T_probe = min(30.0, float(config.T_values[-1]))
    traj = integrate_flow(system, y, (0.0, T_probe), tol=1e-10,
                          check_domain=False)
    ts = np.arange(0.0, T_probe, 0.02)
    dists = np.linalg.norm(traj.sol(ts).T - x, axis=1)
    k = int(np.argmin(dists))
    if dists[k] <= config.flow_pass_tol and ts[k] > 1e-3:
        c, p = _pinned_cost(system, y, x, max(float(ts[k]), 0.5), config.N,
                            config.gtol, config.max_nfev)
        return (c, p) if return_path else c

    costs = []
    paths = []
    for T in config.T_values:
        c, p = _pinned_cost(system, y, x, T, config.N, config.gtol,
                            config.max_nfev)
        costs.append(c)
        paths.append(p)
    j = int(np.argmin(costs))
    best_c, best_p = costs[j], paths[j]

    if config.refine:
        lo = config.T_values[max(j - 1, 0)]
        hi = config.T_values[min(j + 1, len(config.T_values) - 1)]
        if hi > lo:
            def f(T):
                return _pinned_cost(system, y, x, T, config.N, config.gtol,
                                    config.max_nfev)[0]
            r = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                options={"xatol": 1e-2 * (hi - lo),
                                         "maxiter": 20})
            if r.fun < best_c:
                best_c = float(r.fun)
                best_p = _pinned_cost(system, y, x, float(r.x), config.N,
                                      config.gtol, config.max_nfev)[1]
    return (best_c, best_p) if return_path else best_c


def equivalence_probe(system: DynamicalSystem, candidate, n_samples: int = 8,
                      config: Optional[PairConfig] = None,
                      tol: float = 1e-3) -> dict:
    """Pairwise-cost matrix over samples of a candidate equivalence set.

    `candidate` is an attractor object or an (m, d) array of points.  The
    set qualifies when every ordered pair connects at (numerically) zero
    cost."""
    if isinstance(candidate, Equilibrium):
        pts = candidate.sample_points()
    elif isinstance(candidate, LimitCycle):
        idx = np.linspace(0, len(candidate.samples), n_samples,
                          endpoint=False).astype(int)
        pts = candidate.samples[idx]
    else:
        pts = np.asarray(candidate, dtype=float)
    m = len(pts)
    costs = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            costs[i, j] = pairwise_cost(system, pts[i], pts[j], config)
    mx = float(costs.max()) if m > 1 else 0.0
    return {"points": pts, "costs": costs, "max_cost": mx,
            "is_equivalence_class": mx <= tol, "tol": tol}


# ---------------------------------------------------------------------------
# Minimizer diagnostics: the Hamiltonian lift


def _stencil_derivative(times, values, i, width: int = 2):
    """Derivative at node i from a local polynomial fit (order = stencil-1).

    Interior nodes get a centered 5-point quartic fit; nodes near the ends
    fall back to whatever one-sided window is available."""
    n = len(times)
    lo = max(0, i - width)
    hi = min(n, i + width + 1)
    ts = times[lo:hi] - times[i]
    deg = len(ts) - 1
    # derivative of the interpolating polynomial at 0: solve the Vandermonde
    Vm = np.vander(ts, deg + 1, increasing=True)
    coef = np.linalg.solve(Vm, values[lo:hi])
    return coef[1]


def minimizer_diagnostics(system: DynamicalSystem,
                          chart: Optional[UnstableChart],
                          path: PathGrid,
                          chart_tol: float = 1e-3) -> dict:
    """Hamiltonian structure report for a converged minimizing path.

    The Legendre lift p = (1/2) A^{-1} (phidot - b) is formed with interior
    polynomial differencing; reports sup |H| along the lift, the residual
    of the momentum equation, and the earliest horizon after which the lift
    stays within chart_tol of the graph field F.
    """
    times, states = path.times, path.states
    n = len(times)
    d = states.shape[1]
    vels = np.array([[_stencil_derivative(times, states[:, c], i)
                      for c in range(d)] for i in range(n)])
    ps = np.array([0.5 * system.A_inv(x) @ (v - system.b(x))
                   for x, v in zip(states, vels)])
    Hs = np.array([hamiltonian(system, x, p) for x, p in zip(states, ps)])

    # momentum-equation residual (the velocity equation holds identically
    # by construction of the lift)
    pdots = np.array([[_stencil_derivative(times, ps[:, c], i)
                       for c in range(d)] for i in range(n)])
    rhs_p = np.array([
        -np.einsum("i,kij,j->k", p, system.dA(x), p) - system.jac_b(x).T @ p
        for x, p in zip(states, ps)])
    interior = slice(2, n - 2)
    # pdot is a difference of differences: nodes within two stencil widths
    # of an endpoint see asymmetric formulas twice over and are excluded
    p_interior = slice(4, n - 4)
    p_residual = float(np.max(np.linalg.norm(
        (pdots - rhs_p)[p_interior], axis=1))) if n > 8 else 0.0

    entry_time = None
    chart_mismatch = None
    if chart is not None:
        mism = np.full(n, np.inf)
        for i, (x, p) in enumerate(zip(states, ps)):
            if chart.contains(x, "O0"):
                mism[i] = np.linalg.norm(p - chart.F_at(x))
        chart_mismatch = mism
        # earliest T with mismatch <= tol for all t <= -T
        ok = mism <= chart_tol
        k = 0
        while k < n and ok[k]:
            k += 1
        if k > 0:
            entry_time = float(-times[k - 1])

    return {
        "sup_H": float(np.max(np.abs(Hs[interior]))) if n > 4 else 0.0,
        "H_values": Hs,
        "momentum_residual": p_residual,
        "chart_entry_time": entry_time,
        "chart_mismatch": chart_mismatch,
        "momenta": ps,
    }


# ---------------------------------------------------------------------------
# Fields on grids


@dataclass(frozen=True)
class FieldGrid:
    bounds: tuple            # ((x_lo, x_hi), (y_lo, y_hi))
    shape: tuple             # (nx, ny)

    @property
    def xs(self):
        (x0, x1), _ = self.bounds
        nx = self.shape[0]
        h = (x1 - x0) / nx
        return x0 + h * (0.5 + np.arange(nx))

    @property
    def ys(self):
        _, (y0, y1) = self.bounds
        ny = self.shape[1]
        h = (y1 - y0) / ny
        return y0 + h * (0.5 + np.arange(ny))

    @property
    def h(self):
        (x0, x1), (y0, y1) = self.bounds
        return ((x1 - x0) / self.shape[0], (y1 - y0) / self.shape[1])

    def cell_of(self, x):
        (x0, _), (y0, _) = self.bounds
        hx, hy = self.h
        i = int(np.floor((x[0] - x0) / hx))
        j = int(np.floor((x[1] - y0) / hy))
        if 0 <= i < self.shape[0] and 0 <= j < self.shape[1]:
            return i, j
        return None

    def centers(self):
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return X, Y


METHOD_NONE, METHOD_PATH, METHOD_CHARACTERISTIC, METHOD_CHART = 0, 1, 2, 3


@dataclass
class QuasipotentialField:
    grid: FieldGrid
    V: np.ndarray
    valid: np.ndarray
    method: np.ndarray       # per-cell provenance tag
    caustic: np.ndarray
    rho_V: float
    attractor: object = None

    def value_at(self, x):
        c = self.grid.cell_of(x)
        if c is None or not self.valid[c]:
            return np.nan
        return float(self.V[c])

    def boundary_adjacent_valid(self):
        nx, ny = self.grid.shape
        ring = np.zeros((nx, ny), dtype=bool)
        ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = True
        # cells adjacent to invalid cells also face the effective boundary
        inv = ~self.valid
        pad = np.zeros((nx + 2, ny + 2), dtype=bool)
        pad[1:-1, 1:-1] = inv
        near_inv = (pad[:-2, 1:-1] | pad[2:, 1:-1] | pad[1:-1, :-2]
                    | pad[1:-1, 2:])
        return self.valid & (ring | near_inv)

    def sublevel_connected(self, level: float) -> bool:
        """Flood fill: is {V < level} (valid cells) a single component?"""
        mask = self.valid & (self.V < level)
        if not mask.any():
            return True
        nx, ny = mask.shape
        seen = np.zeros_like(mask)
        start = np.unravel_index(int(np.argmin(np.where(mask, self.V,
                                                        np.inf))), mask.shape)
        stack = [start]
        seen[start] = True
        while stack:
            i, j = stack.pop()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                a, b = i + di, j + dj
                if 0 <= a < nx and 0 <= b < ny and mask[a, b] \
                        and not seen[a, b]:
                    seen[a, b] = True
                    stack.append((a, b))
        return bool(np.all(seen[mask]))

    def to_csv(self, path):
        X, Y = self.grid.centers()
        data = np.column_stack([
            X.ravel(), Y.ravel(), self.V.ravel(),
            self.method.ravel().astype(float),
            self.caustic.ravel().astype(float)])
        np.savetxt(path, data, delimiter=",",
                   header="x_1,x_2,V,method,caustic_flag", comments="")

    def meta_json(self, path):
        with open(path, "w") as fh:
            json.dump({"bounds": self.grid.bounds, "shape": self.grid.shape,
                       "rho_V": self.rho_V,
                       "n_valid": int(self.valid.sum()),
                       "n_caustic": int(self.caustic.sum())}, fh, indent=1)


def _compute_rho_V(field: QuasipotentialField) -> float:
    ring = field.boundary_adjacent_valid()
    if not ring.any():
        return float("inf")
    return float(field.V[ring].min())


@dataclass
class SweepConfig:
    n_seeds: int = 256
    t_max: float = 30.0
    ivp_tol: float = 1e-10
    V_cap: float = np.inf
    caustic_p_tol: float = 0.2
    caustic_V_tol: float = 0.05       # relative cost-tie window for flagging
    mask: Optional[Callable] = None   # cell-center predicate for the region


def characteristic_sweep(system: DynamicalSystem, chart: UnstableChart,
                         grid: FieldGrid,
                         config: Optional[SweepConfig] = None
                         ) -> QuasipotentialField:
    """V by forward Hamiltonian characteristics seeded on the chart rim.

    Seeds (x, F(x)) on the O2 boundary are flowed forward; V accumulates as
    the line integral of v.p.  Each cell keeps the minimum arrival value
    (first-order-corrected to the cell center); arrivals with conflicting
    momenta mark the cell as a caustic, outside the smooth set.
    """
    config = config or SweepConfig()
    d = system.dim
    nx, ny = grid.shape
    V = np.full((nx, ny), np.inf)
    P = np.zeros((nx, ny, d))
    method = np.zeros((nx, ny), dtype=np.int8)
    caustic = np.zeros((nx, ny), dtype=bool)

    (gx0, gx1), (gy0, gy1) = grid.bounds
    hx, hy = grid.h
    base = hamiltonian_rhs(system)

    def rhs(t, z):
        dz = base(t, z[:2 * d])
        # Vdot = v . p along the characteristic
        return np.concatenate([dz, [dz[:d] @ z[d:2 * d]]])

    margin = 2.0 * max(hx, hy)

    def exit_event(t, z):
        return min(z[0] - gx0 + margin, gx1 + margin - z[0],
                   z[1] - gy0 + margin, gy1 + margin - z[1])
    exit_event.terminal = True
    exit_event.direction = -1

    seeds = chart.boundary_points("O2", config.n_seeds)
    for x0 in seeds:
        p0 = chart.F_at(x0)
        V0 = chart.V_at(x0)
        z0 = np.concatenate([x0, p0, [V0]])
        sol = solve_ivp(rhs, (0.0, config.t_max), z0, method="DOP853",
                        rtol=config.ivp_tol, atol=config.ivp_tol,
                        dense_output=True, events=[exit_event])
        if sol.status == -1:
            continue
        t_end = sol.t[-1]
        # walk the dense output with spatial steps ~ half a cell
        t = 0.0
        while t <= t_end:
            z = sol.sol(t)
            x, p, Vv = z[:d], z[d:2 * d], z[2 * d]
            if Vv > config.V_cap:
                break
            c = grid.cell_of(x)
            if c is not None:
                center = np.array([grid.xs[c[0]], grid.ys[c[1]]])
                cand = Vv + p @ (center - x)
                if V[c] < np.inf:
                    # a caustic is a near-tie between distinct ray families;
                    # a pricier post-focal ray crossing the cell is not one
                    tie = abs(cand - V[c]) <= config.caustic_V_tol * (
                        1e-2 + min(cand, V[c]))
                    if tie and np.linalg.norm(p - P[c]) > \
                            config.caustic_p_tol * (1.0 + np.linalg.norm(P[c])):
                        caustic[c] = True
                if cand < V[c]:
                    V[c] = cand
                    P[c] = p
                    method[c] = METHOD_CHARACTERISTIC
            v = 2.0 * system.A(x) @ p + system.b(x)
            speed = np.linalg.norm(v)
            t += min(hx, hy) / (2.0 * speed) if speed > 1e-8 else 0.05
    # fill the chart core, where no characteristics run
    for i in range(nx):
        for j in range(ny):
            xc = np.array([grid.xs[i], grid.ys[j]])
            if chart.manifold_distance(xc) <= chart.region_radius("O2"):
                V[i, j] = chart.V_at(xc)
                method[i, j] = METHOD_CHART
                # inside the tube the graph field is single-valued: ties
                # seen here came from non-minimizing post-focal rays
                caustic[i, j] = False
    valid = np.isfinite(V)
    if config.mask is not None:
        X, Y = grid.centers()
        want = np.vectorize(lambda a, b: bool(config.mask(np.array([a, b]))))(
            X, Y)
        if not (valid & want).any():
            raise CoverageError("no characteristic reached the requested "
                                "subregion")
        valid &= want
    elif not valid.any():
        raise CoverageError("characteristic sweep covered no cells")
    V = np.where(valid, V, np.nan)
    fieldv = QuasipotentialField(grid=grid, V=V, valid=valid, method=method,
                                 caustic=caustic, rho_V=np.nan,
                                 attractor=chart.attractor)
    fieldv.rho_V = _compute_rho_V(fieldv)
    return fieldv


def field_from_chart(system: DynamicalSystem, chart: UnstableChart,
                     grid: FieldGrid, pad: float = 0.98,
                     mask: Optional[Callable] = None) -> QuasipotentialField:
    """Smooth V field evaluated from the chart's interpolated cost.

    Covers the tubular neighbourhood only, but with spline smoothness --
    the right input for finite-difference gradient work."""
    nx, ny = grid.shape
    V = np.full((nx, ny), np.nan)
    valid = np.zeros((nx, ny), dtype=bool)
    method = np.zeros((nx, ny), dtype=np.int8)
    r_max = pad * chart.region_radius("O0")
    for i in range(nx):
        for j in range(ny):
            xc = np.array([grid.xs[i], grid.ys[j]])
            if mask is not None and not mask(xc):
                continue
            if chart.manifold_distance(xc) <= r_max:
                V[i, j] = chart.V_at(xc)
                valid[i, j] = True
                method[i, j] = METHOD_CHART
    if not valid.any():
        raise CoverageError("chart does not cover the requested grid")
    fieldv = QuasipotentialField(grid=grid, V=V, valid=valid, method=method,
                                 caustic=np.zeros((nx, ny), dtype=bool),
                                 rho_V=np.nan, attractor=chart.attractor)
    fieldv.rho_V = _compute_rho_V(fieldv)
    return fieldv
