"""Hamiltonian / Lagrangian structure and the phase flow.

H(x, p) = p^T A(x) p + b(x) . p
L(x, v) = (1/4) (b(x) - v)^T A^-1(x) (b(x) - v)

Extremal orbits solve

    xdot = 2 A(x) p + b(x)
    pdot = -p^T gradA(x) p - gradb^T(x) p

H is conserved along the phase flow; the integrator is a non-symplectic
adaptive RK scheme and the drift of H is recorded, not assumed zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationFailure
from .systems import DynamicalSystem


def hamiltonian(system: DynamicalSystem, x, p) -> float:
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(p @ system.A(x) @ p + system.b(x) @ p)


def lagrangian(system: DynamicalSystem, x, v) -> float:
    x = np.asarray(x, dtype=float)
    r = system.b(x) - np.asarray(v, dtype=float)
    return float(0.25 * r @ system.A_inv(x) @ r)


def legendre_p(system: DynamicalSystem, x, v) -> np.ndarray:
    """Momentum p = d_v L(x, v) = (1/2) A^-1 (v - b)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * system.A_inv(x) @ (np.asarray(v, dtype=float) - system.b(x))


def legendre_v(system: DynamicalSystem, x, p) -> np.ndarray:
    """Velocity v = d_p H(x, p) = 2 A p + b."""
    x = np.asarray(x, dtype=float)
    return 2.0 * system.A(x) @ np.asarray(p, dtype=float) + system.b(x)


def hamiltonian_rhs(system: DynamicalSystem):
    d = system.dim

    def rhs(t, z):
        x, p = z[:d], z[d:]
        A = system.A(x)
        J = system.jac_b(x)
        dA = system.dA(x)
        # (p^T dA p)_k with dA[k] = dA/dx_k
        pAp = np.einsum("i,kij,j->k", p, dA, p)
        return np.concatenate([2.0 * A @ p + system.b(x),
                               -pAp - J.T @ p])

    return rhs


@dataclass
class HamiltonianTrajectory:
    times: np.ndarray
    states: np.ndarray      # (n, 2d): x then p
    H_values: np.ndarray
    H_drift: float          # max |H(t) - H(t0)|
    truncated: bool
    sol: object

    def x(self, i=None):
        d = self.states.shape[1] // 2
        return self.states[:, :d] if i is None else self.states[i, :d]

    def p(self, i=None):
        d = self.states.shape[1] // 2
        return self.states[:, d:] if i is None else self.states[i, d:]

    def to_csv(self, path):
        d = self.states.shape[1] // 2
        header = ("t," + ",".join(f"x_{i + 1}" for i in range(d)) + ","
                  + ",".join(f"p_{i + 1}" for i in range(d)) + ",H")
        data = np.column_stack([self.times, self.states, self.H_values])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def integrate_hamiltonian(system: DynamicalSystem, x0, p0, t_span,
                          tol: float = 1e-10, t_eval=None,
                          bound: float = 50.0,
                          events=None) -> HamiltonianTrajectory:
    """Integrate the phase flow over t_span (forward or backward).

    Truncates (with a flag) when the orbit leaves the bounding box
    |x|_inf <= bound, |p|_inf <= bound.
    """
    x0 = np.asarray(x0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    d = system.dim
    z0 = np.concatenate([x0, p0])

    def box_event(t, z):
        return bound - float(np.max(np.abs(z)))
    box_event.terminal = True
    box_event.direction = -1

    evs = [box_event] + (list(events) if events else [])
    res = solve_ivp(hamiltonian_rhs(system), t_span, z0, method="DOP853",
                    rtol=tol, atol=tol, dense_output=True, t_eval=t_eval,
                    events=evs)
    if res.status == -1:
        raise IntegrationFailure(res.message,
                                 last_time=res.t[-1] if len(res.t) else t_span[0],
                                 last_state=res.y[:, -1] if len(res.t) else z0)
    states = res.y.T
    ts = res.t
    order = np.argsort(ts)
    ts, states = ts[order], states[order]
    Hs = np.array([hamiltonian(system, s[:d], s[d:]) for s in states])
    H0 = hamiltonian(system, x0, p0)
    return HamiltonianTrajectory(times=ts, states=states, H_values=Hs,
                                 H_drift=float(np.max(np.abs(Hs - H0))) if len(Hs) else 0.0,
                                 truncated=(res.status == 1), sol=res.sol)


def linearized_hamiltonian_flow(system: DynamicalSystem, x, t: float,
                                tol: float = 1e-11) -> np.ndarray:
    """Psi_H(x, t): 2d x 2d linearized phase flow along the orbit of x on M.

    Along the attractor p = 0, so the linearization has the block form
    [[gradb, 2A], [0, -gradb^T]] and the lower-right block integrates to the
    dual cocycle.
    """
    x = np.asarray(x, dtype=float)
    d = system.dim
    if t == 0.0:
        return np.eye(2 * d)

    def rhs(tt, z):
        xx = z[:d]
        Y = z[d:].reshape(2 * d, 2 * d)
        J = system.jac_b(xx)
        A = system.A(xx)
        B = np.zeros((2 * d, 2 * d))
        B[:d, :d] = J
        B[:d, d:] = 2.0 * A
        B[d:, d:] = -J.T
        return np.concatenate([system.b(xx), (B @ Y).ravel()])

    z0 = np.concatenate([x, np.eye(2 * d).ravel()])
    res = solve_ivp(rhs, (0.0, t), z0, method="DOP853", rtol=tol, atol=tol)
    if res.status != 0:
        raise IntegrationFailure(res.message, last_time=res.t[-1],
                                 last_state=res.y[:d, -1])
    return res.y[d:, -1].reshape(2 * d, 2 * d)


def symplectic_form(u, v) -> float:
    """omega((y1,q1),(y2,q2)) = y1.q2 - q1.y2."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = len(u) // 2
    return float(u[:d] @ v[d:] - u[d:] @ v[:d])
