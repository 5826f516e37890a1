"""Dynamical systems: drift/diffusion definitions, benchmark scenarios, flow integration.

A system is the data (b, grad b, A, grad A, A^-1, domain).  All benchmark
scenarios carry hand-coded Jacobians; the diffusion is the identity for every
builtin, but the data model keeps A general so the rest of the package never
assumes it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    IntegrationFailure,
    NoCycleError,
    UnknownScenarioError,
    WrongAttractorTypeError,
)

# Boundary roles a domain can play (see Domain.role).
ROLE_TRUNCATION = "truncation-of-whole-space"
ROLE_ABSORBING = "absorbing"
ROLE_INVARIANT = "positively-invariant"


@dataclass(frozen=True)
class Domain:
    """Computational domain Omega.

    kind: "box" with bounds ((lo1, hi1), ..., (lod, hid)),
          "disk" with bounds (center, radius),
          "annulus" with bounds (center, r_inner, r_outer).
    """

    kind: str
    bounds: tuple
    role: str = ROLE_TRUNCATION

    def __post_init__(self):
        if self.kind == "box":
            for lo, hi in self.bounds:
                if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                    raise ValueError("box bounds must be finite and ordered")
        elif self.kind == "disk":
            _, r = self.bounds
            if not (np.isfinite(r) and r > 0):
                raise ValueError("disk radius must be finite and positive")
        elif self.kind == "annulus":
            _, r_in, r_out = self.bounds
            if not (0 < r_in < r_out < np.inf):
                raise ValueError("annulus needs 0 < r_inner < r_outer < inf")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    def boundary_distance(self, x) -> float:
        """Signed distance-like margin to the boundary; positive inside."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            lo = np.array([b[0] for b in self.bounds])
            hi = np.array([b[1] for b in self.bounds])
            return float(np.min(np.minimum(x - lo, hi - x)))
        if self.kind == "disk":
            c, r = self.bounds
            return float(r - np.linalg.norm(x - np.asarray(c)))
        c, r_in, r_out = self.bounds
        rho = np.linalg.norm(x - np.asarray(c))
        return float(min(rho - r_in, r_out - rho))

    def contains(self, x) -> bool:
        return self.boundary_distance(x) >= 0.0


@dataclass(frozen=True)
class DynamicalSystem:
    """Drift b, its Jacobian, diffusion A with derivative and inverse, domain."""

    name: str
    dim: int
    b: Callable[[np.ndarray], np.ndarray]
    jac_b: Callable[[np.ndarray], np.ndarray]
    A: Callable[[np.ndarray], np.ndarray]
    dA: Callable[[np.ndarray], np.ndarray]  # rank-3, dA(x)[k] = dA/dx_k
    A_inv: Callable[[np.ndarray], np.ndarray]
    domain: Domain
    params: dict = field(default_factory=dict)

    def constant_diffusion(self) -> bool:
        # Builtins all use constant A; generic code may use this to take
        # cheaper paths (e.g. exact least-squares Jacobians).
        return bool(self.params.get("_A_constant", False))


def constant_diffusion_fields(M: np.ndarray):
    """(A, dA, A_inv) callables for a constant diffusion matrix."""
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    Minv = np.linalg.inv(M)
    zero = np.zeros((d, d, d))
    return (lambda x: M, lambda x: zero, lambda x: Minv)


# ---------------------------------------------------------------------------
# Attractor specifications


@dataclass(frozen=True)
class Equilibrium:
    x_star: np.ndarray

    manifold_dim = 0

    def sample_points(self) -> np.ndarray:
        return np.asarray(self.x_star, dtype=float)[None, :]

    def project(self, x) -> np.ndarray:
        return np.asarray(self.x_star, dtype=float)

    def distance(self, x) -> float:
        return float(np.linalg.norm(np.asarray(x) - self.x_star))


@dataclass(frozen=True)
class LimitCycle:
    anchor: np.ndarray
    period: float
    samples: np.ndarray  # (N, d), equally spaced in time, samples[0] == anchor
    sample_times: np.ndarray

    manifold_dim = 1

    def sample_points(self) -> np.ndarray:
        return self.samples

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d2 = np.sum((self.samples - x) ** 2, axis=1)
        j = int(np.argmin(d2))
        # quadratic refine through the three neighbouring samples
        n = len(self.samples)
        jm, jp = (j - 1) % n, (j + 1) % n
        pts = self.samples[[jm, j, jp]]
        f = np.sum((pts - x) ** 2, axis=1)
        denom = f[0] - 2.0 * f[1] + f[2]
        s = 0.0 if abs(denom) < 1e-300 else 0.5 * (f[0] - f[2]) / denom
        s = float(np.clip(s, -1.0, 1.0))
        if s <= 0.0:
            lo, w = pts[0], 1.0 + s
            return lo + w * (pts[1] - lo)
        lo, w = pts[1], s
        return lo + w * (pts[2] - lo)

    def distance(self, x) -> float:
        return float(np.linalg.norm(np.asarray(x) - self.project(x)))

    def phase_of(self, x) -> float:
        """Time-parameter of the closest sample (coarse asymptotic phase)."""
        x = np.asarray(x, dtype=float)
        d2 = np.sum((self.samples - x) ** 2, axis=1)
        return float(self.sample_times[int(np.argmin(d2))])


@dataclass(frozen=True)
class SampledManifold:
    points: np.ndarray
    tangents: np.ndarray  # (N, d, d_M) tangent bases

    @property
    def manifold_dim(self):
        return self.tangents.shape[2]

    def sample_points(self) -> np.ndarray:
        return self.points

    def project(self, x) -> np.ndarray:
        d2 = np.sum((self.points - np.asarray(x)) ** 2, axis=1)
        return self.points[int(np.argmin(d2))]

    def distance(self, x) -> float:
        return float(np.linalg.norm(np.asarray(x) - self.project(x)))


# ---------------------------------------------------------------------------
# Flow integration


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_times, d)
    truncated: bool
    sol: object  # scipy dense-output interpolant

    def __call__(self, t):
        return np.atleast_1d(self.sol(t)).T if np.ndim(t) else self.sol(t)

    def to_csv(self, path):
        d = self.states.shape[1]
        header = "t," + ",".join(f"x_{i + 1}" for i in range(d))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def integrate_flow(system: DynamicalSystem, x0, t_span, tol: float = 1e-10,
                   t_eval=None, check_domain: bool = True) -> Trajectory:
    """Integrate xdot = b(x) with an adaptive high-order explicit RK scheme.

    The trajectory is truncated (flagged) if it exits the domain.
    """
    x0 = np.asarray(x0, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if check_domain and not system.domain.contains(x0):
        raise ValueError("initial state outside the domain")

    events = None
    if check_domain:
        def exit_event(t, x):
            return system.domain.boundary_distance(x)
        exit_event.terminal = True
        exit_event.direction = -1
        events = [exit_event]

    res = solve_ivp(lambda t, x: system.b(x), t_span, x0, method="DOP853",
                    rtol=tol, atol=tol, dense_output=True, events=events,
                    t_eval=t_eval)
    if res.status == -1:
        raise IntegrationFailure(res.message,
                                 last_time=res.t[-1] if len(res.t) else t_span[0],
                                 last_state=res.y[:, -1] if len(res.t) else x0)
    truncated = res.status == 1
    return Trajectory(times=res.t, states=res.y.T, truncated=truncated,
                      sol=res.sol)


def flow_map(system: DynamicalSystem, x0, t: float, tol: float = 1e-10,
             check_domain: bool = False) -> np.ndarray:
    """End point of the flow after time t (t may be negative)."""
    if t == 0.0:
        return np.asarray(x0, dtype=float)
    traj = integrate_flow(system, x0, (0.0, t), tol=tol,
                          check_domain=check_domain)
    return traj.states[-1]


# ---------------------------------------------------------------------------
# Limit-cycle location


def find_limit_cycle(system: DynamicalSystem, seed, tol: float = 1e-8,
                     n_samples: int = 64, transient: float = 40.0,
                     max_newton: int = 30) -> LimitCycle:
    """Locate a stable periodic orbit by Poincare shooting from `seed`.

    Raises WrongAttractorTypeError if the seed converges to an equilibrium
    and NoCycleError if the Newton iteration fails.
    """
    x = np.asarray(seed, dtype=float)
    d = len(x)

    # burn off the transient; bail out early if we land on an equilibrium
    traj = integrate_flow(system, x, (0.0, transient), tol=1e-10)
    x = traj.states[-1]
    if np.linalg.norm(system.b(x)) < 1e-8:
        raise WrongAttractorTypeError(
            "seed converges to an equilibrium, not a periodic orbit")

    # period estimate from successive returns to the section through x
    n_hat = system.b(x)
    n_hat = n_hat / np.linalg.norm(n_hat)

    def section(t, y):
        return float(n_hat @ (y - x))
    section.terminal = False
    section.direction = 1

    res = solve_ivp(lambda t, y: system.b(y), (0.0, 400.0), x, method="DOP853",
                    rtol=1e-10, atol=1e-10, events=[section])
    hits = res.t_events[0]
    hits = hits[hits > 1e-6]
    if len(hits) == 0:
        raise NoCycleError("no return to the Poincare section")
    T = float(hits[0])

    # Newton on (x0, T): flow_T(x0) - x0 = 0 plus the section pin
    def residual(z):
        x0, TT = z[:d], z[d]
        if TT <= 0:
            return np.full(d + 1, 1e3)
        xT = flow_map(system, x0, TT, tol=1e-12)
        return np.concatenate([xT - x0, [n_hat @ (x0 - x)]])

    z = np.concatenate([x, [T]])
    for _ in range(max_newton):
        r = residual(z)
        err = np.linalg.norm(r[:d])
        if err <= tol and abs(r[d]) <= tol:
            break
        # finite-difference Jacobian; d is small for every scenario
        J = np.zeros((d + 1, d + 1))
        h = 1e-7
        for j in range(d + 1):
            dz = np.zeros(d + 1)
            dz[j] = h
            J[:, j] = (residual(z + dz) - r) / h
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise NoCycleError(f"singular shooting Jacobian: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise NoCycleError("non-finite Newton step in cycle search")
        z = z + step
    else:
        raise NoCycleError(
            f"Poincare-Newton did not reach tol={tol}: residual {err:.3e}")

    x0, T = z[:d], float(z[d])
    if np.linalg.norm(system.b(x0)) < 1e-8:
        raise WrongAttractorTypeError("cycle search collapsed onto an equilibrium")

    ts = np.linspace(0.0, T, n_samples, endpoint=False)
    traj = integrate_flow(system, x0, (0.0, T), tol=1e-12, t_eval=ts)
    return LimitCycle(anchor=x0, period=T, samples=traj.states,
                      sample_times=ts)


def resample_cycle(system: DynamicalSystem, cycle: LimitCycle,
                   n_samples: int) -> LimitCycle:
    ts = np.linspace(0.0, cycle.period, n_samples, endpoint=False)
    traj = integrate_flow(system, cycle.anchor, (0.0, cycle.period),
                          tol=1e-12, t_eval=ts)
    return LimitCycle(anchor=cycle.anchor, period=cycle.period,
                      samples=traj.states, sample_times=ts)


# ---------------------------------------------------------------------------
# Builtin scenarios


def _make_ou():
    A, dA, Ainv = constant_diffusion_fields(np.eye(2))
    dom = Domain("box", ((-3.0, 3.0), (-3.0, 3.0)), ROLE_TRUNCATION)
    sys_ = DynamicalSystem(
        name="ou", dim=2,
        b=lambda x: -np.asarray(x, dtype=float),
        jac_b=lambda x: -np.eye(2),
        A=A, dA=dA, A_inv=Ainv, domain=dom,
        params={"_A_constant": True})
    return sys_, Equilibrium(np.zeros(2))


def _make_ou_1d():
    A, dA, Ainv = constant_diffusion_fields(np.eye(1))
    dom = Domain("box", ((-3.0, 3.0),), ROLE_TRUNCATION)
    sys_ = DynamicalSystem(
        name="ou-1d", dim=1,
        b=lambda x: -np.asarray(x, dtype=float),
        jac_b=lambda x: -np.eye(1),
        A=A, dA=dA, A_inv=Ainv, domain=dom,
        params={"_A_constant": True})
    return sys_, Equilibrium(np.zeros(1))


def _make_double_well():
    # b = -grad U with U = (x^2-1)^2/4 + y^2/2; wells at (+-1, 0)
    A, dA, Ainv = constant_diffusion_fields(np.eye(2))
    dom = Domain("box", ((-2.0, 2.0), (-2.0, 2.0)), ROLE_TRUNCATION)

    def b(z):
        x, y = z
        return np.array([x - x ** 3, -y])

    def jac(z):
        x, y = z
        return np.array([[1.0 - 3.0 * x * x, 0.0], [0.0, -1.0]])

    sys_ = DynamicalSystem(name="gradient-double-well", dim=2, b=b, jac_b=jac,
                           A=A, dA=dA, A_inv=Ainv, domain=dom,
                           params={"_A_constant": True})
    return sys_, Equilibrium(np.array([1.0, 0.0]))


def double_well_potential(z):
    x, y = np.asarray(z, dtype=float)
    return (x * x - 1.0) ** 2 / 4.0 + y * y / 2.0


def _make_hopf(omega: float = 1.0):
    # normal form: rdot = r(1 - r^2), thetadot = omega
    A, dA, Ainv = constant_diffusion_fields(np.eye(2))
    dom = Domain("disk", (np.zeros(2), 2.0), ROLE_INVARIANT)

    def b(z):
        x, y = z
        r2 = x * x + y * y
        return np.array([x * (1.0 - r2) - omega * y,
                         y * (1.0 - r2) + omega * x])

    def jac(z):
        x, y = z
        r2 = x * x + y * y
        return np.array([
            [1.0 - r2 - 2.0 * x * x, -2.0 * x * y - omega],
            [omega - 2.0 * x * y, 1.0 - r2 - 2.0 * y * y],
        ])

    T = 2.0 * np.pi / omega
    n = 64
    ts = np.linspace(0.0, T, n, endpoint=False)
    samples = np.column_stack([np.cos(omega * ts), np.sin(omega * ts)])
    cyc = LimitCycle(anchor=np.array([1.0, 0.0]), period=T, samples=samples,
                     sample_times=ts)
    sys_ = DynamicalSystem(name="hopf", dim=2, b=b, jac_b=jac, A=A, dA=dA,
                           A_inv=Ainv, domain=dom,
                           params={"omega": omega, "_A_constant": True})
    return sys_, cyc


def hopf_quasipotential(z):
    """Closed-form V = (1 - r^2)^2 / 4 of the Hopf normal form."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    return (1.0 - r2) ** 2 / 4.0


def _make_vanderpol(mu: float = 1.0):
    A, dA, Ainv = constant_diffusion_fields(np.eye(2))
    dom = Domain("box", ((-4.0, 4.0), (-4.0, 4.0)), ROLE_TRUNCATION)

    def b(z):
        x, y = z
        return np.array([y, mu * (1.0 - x * x) * y - x])

    def jac(z):
        x, y = z
        return np.array([[0.0, 1.0],
                         [-2.0 * mu * x * y - 1.0, mu * (1.0 - x * x)]])

    sys_ = DynamicalSystem(name="vanderpol", dim=2, b=b, jac_b=jac, A=A,
                           dA=dA, A_inv=Ainv, domain=dom,
                           params={"mu": mu, "_A_constant": True})
    return sys_, None


def _make_maier_stein(beta: float = 10.0):
    A, dA, Ainv = constant_diffusion_fields(np.eye(2))
    dom = Domain("box", ((-1.8, 1.8), (-1.2, 1.2)), ROLE_TRUNCATION)

    def b(z):
        x, y = z
        return np.array([x - x ** 3 - beta * x * y * y,
                         -(1.0 + x * x) * y])

    def jac(z):
        x, y = z
        return np.array([
            [1.0 - 3.0 * x * x - beta * y * y, -2.0 * beta * x * y],
            [-2.0 * x * y, -(1.0 + x * x)],
        ])

    sys_ = DynamicalSystem(name="maier-stein", dim=2, b=b, jac_b=jac, A=A,
                           dA=dA, A_inv=Ainv, domain=dom,
                           params={"beta": beta, "_A_constant": True})
    return sys_, Equilibrium(np.array([1.0, 0.0]))


_REGISTRY = {
    "ou": _make_ou,
    "ou-1d": _make_ou_1d,
    "gradient-double-well": _make_double_well,
    "hopf": _make_hopf,
    "vanderpol": _make_vanderpol,
    "maier-stein": _make_maier_stein,
}


def builtin_scenario(name: str, **params):
    """Return (system, attractor_or_None) for a named benchmark scenario."""
    if name not in _REGISTRY:
        raise UnknownScenarioError(
            f"unknown scenario {name!r}; valid names: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**params)


def list_scenarios():
    return sorted(_REGISTRY)


def load_scenario(source):
    """Build a scenario from a JSON document {"name", "params", "domain"}.

    `source` is a path, a JSON string, or an already-parsed dict.  The
    optional "domain" entry overrides the builtin domain.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = None
        try:
            with open(source) as fh:
                text = fh.read()
        except (OSError, TypeError):
            text = source
        doc = json.loads(text)
    name = doc.get("name")
    if name is None:
        raise UnknownScenarioError("scenario document lacks a 'name'")
    params = doc.get("params", {})
    sys_, attr = builtin_scenario(name, **params)
    if "domain" in doc:
        dd = doc["domain"]
        bounds = dd["bounds"]
        if dd["kind"] == "box":
            bounds = tuple(tuple(b) for b in bounds)
        elif dd["kind"] == "disk":
            bounds = (np.asarray(bounds[0], dtype=float), float(bounds[1]))
        else:
            bounds = (np.asarray(bounds[0], dtype=float), float(bounds[1]),
                      float(bounds[2]))
        dom = Domain(dd["kind"], bounds, dd.get("role", ROLE_TRUNCATION))
        sys_ = DynamicalSystem(name=sys_.name, dim=sys_.dim, b=sys_.b,
                               jac_b=sys_.jac_b, A=sys_.A, dA=sys_.dA,
                               A_inv=sys_.A_inv, domain=dom,
                               params=sys_.params)
    return sys_, attr
