"""Variational equations along orbits: cocycles and the tangent/stable splitting.

The fundamental matrix Psi(x,t) solves ydot = grad_b(x.t) y with Psi(x,0)=I,
integrated jointly with the base orbit.  Its dual (Psi^T)^-1 solves the
adjoint equation ydot = -grad_b^T(x.t) y.  For a normally contracting
attractor (equilibrium or limit cycle) `floquet_splitting` returns per-sample
frames holding the tangent/stable splitting, the projection P(x) onto the
stable bundle along the tangent, and the contraction rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationFailure, NotNormallyContractingError
from .systems import DynamicalSystem, Equilibrium, LimitCycle


@dataclass(frozen=True)
class ManifoldFrame:
    x: np.ndarray
    tangent: np.ndarray        # (d, d_M) basis of T_x M (d_M may be 0)
    stable_basis: np.ndarray   # (d, d - d_M) basis of S(x)
    P: np.ndarray              # projection onto S(x) along T_x M
    beta0: float
    beta_star: float
    k_prime: int = 2

    @property
    def dim(self):
        return self.P.shape[0]

    @property
    def manifold_dim(self):
        return self.tangent.shape[1]

    def E_basis(self) -> np.ndarray:
        """Orthonormal basis of E(x) = range P^T."""
        if self.manifold_dim == 0:
            return np.eye(self.dim)
        u, s, _ = np.linalg.svd(self.P.T)
        r = int(np.sum(s > 1e-10))
        return u[:, :r]

    def N_basis(self) -> np.ndarray:
        """Orthonormal basis of N(x) = range (I - P^T)."""
        M = np.eye(self.dim) - self.P.T
        u, s, _ = np.linalg.svd(M)
        r = int(np.sum(s > 1e-10))
        return u[:, :r]


def _variational_rhs(system, adjoint: bool):
    d = system.dim

    def rhs(t, z):
        x = z[:d]
        Y = z[d:].reshape(d, d)
        J = system.jac_b(x)
        dY = (-J.T @ Y) if adjoint else (J @ Y)
        return np.concatenate([system.b(x), dY.ravel()])

    return rhs


def _integrate_variational_extended(system, x, t: float, adjoint: bool,
                                    steps_per_unit: int = 8000) -> np.ndarray:
    """Fixed-step RK4 in 80-bit extended precision.

    Backward growth like e^{beta |t|} makes small *absolute* cocycle
    residuals unreachable in double precision once |Psi| is large; the
    extended-precision path pushes the relative error to ~1e-14.
    """
    d = system.dim
    n = max(2000, int(steps_per_unit * abs(t)))
    h = np.longdouble(t) / n
    z = np.concatenate([np.asarray(x, dtype=np.longdouble),
                        np.eye(d, dtype=np.longdouble).ravel()])

    def rhs(zz):
        xx = zz[:d]
        Y = zz[d:].reshape(d, d)
        J = np.asarray(system.jac_b(xx), dtype=np.longdouble)
        dY = (-J.T @ Y) if adjoint else (J @ Y)
        return np.concatenate([np.asarray(system.b(xx), dtype=np.longdouble),
                               dY.ravel()])

    for _ in range(n):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    xe = np.asarray(z[:d], dtype=float)
    if not system.domain.contains(xe):
        raise IntegrationFailure("base orbit exited the domain",
                                 last_time=t, last_state=xe)
    return np.asarray(z[d:], dtype=float).reshape(d, d)


def flow_map_extended(system, x, t: float,
                      steps_per_unit: int = 8000) -> np.ndarray:
    """Extended-precision fixed-step RK4 flow map (companion to the
    extended variational path; needed when base-point errors would be
    amplified by the cocycle growth)."""
    if t == 0.0:
        return np.asarray(x, dtype=float)
    n = max(2000, int(steps_per_unit * abs(t)))
    h = np.longdouble(t) / n
    z = np.asarray(x, dtype=np.longdouble)

    def rhs(zz):
        return np.asarray(system.b(zz), dtype=np.longdouble)

    for _ in range(n):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return np.asarray(z, dtype=float)


def _integrate_variational(system: DynamicalSystem, x, t: float, tol: float,
                           adjoint: bool) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = system.dim
    if t == 0.0:
        return np.eye(d)
    if tol < 1e-13:
        return _integrate_variational_extended(system, x, t, adjoint)
    z0 = np.concatenate([x, np.eye(d).ravel()])
    res = solve_ivp(_variational_rhs(system, adjoint), (0.0, t), z0,
                    method="DOP853", rtol=tol, atol=tol)
    if res.status != 0:
        raise IntegrationFailure(res.message, last_time=res.t[-1],
                                 last_state=res.y[:d, -1])
    xe = res.y[:d, -1]
    if not system.domain.contains(xe):
        raise IntegrationFailure("base orbit exited the domain",
                                 last_time=res.t[-1], last_state=xe)
    return res.y[d:, -1].reshape(d, d)


def fundamental_matrix(system: DynamicalSystem, x, t: float,
                       tol: float = 1e-11) -> np.ndarray:
    """Psi(x, t) = D phi^t(x), the principal fundamental matrix."""
    return _integrate_variational(system, x, t, tol, adjoint=False)


def dual_cocycle(system: DynamicalSystem, x, t: float,
                 tol: float = 1e-11) -> np.ndarray:
    """(Psi^T)^-1(x, t), integrated from the adjoint equation directly."""
    return _integrate_variational(system, x, t, tol, adjoint=True)


def _projection_from_bases(tangent: np.ndarray, stable: np.ndarray) -> np.ndarray:
    """P with ker P = span(tangent), P|_stable = identity."""
    d = stable.shape[0]
    if tangent.shape[1] == 0:
        return np.eye(d)
    B = np.column_stack([tangent, stable])
    sel = np.zeros((d, d))
    k = tangent.shape[1]
    sel[k:, k:] = np.eye(d - k)
    C = np.column_stack([np.zeros((d, k)), stable])
    return C @ np.linalg.solve(B, np.eye(d))


def _equilibrium_frame(system: DynamicalSystem, x_star,
                       k_prime: int = 2) -> ManifoldFrame:
    x_star = np.asarray(x_star, dtype=float)
    d = system.dim
    lams = np.linalg.eigvals(system.jac_b(x_star))
    rates = -lams.real
    if np.any(rates <= 0.0):
        raise NotNormallyContractingError(
            f"equilibrium spectrum not contracting: eigenvalues {lams}")
    beta_star = float(np.min(rates))
    beta0 = beta_star / (2 * k_prime + 1)
    return ManifoldFrame(x=x_star, tangent=np.zeros((d, 0)),
                         stable_basis=np.eye(d), P=np.eye(d),
                         beta0=beta0, beta_star=beta_star, k_prime=k_prime)


def monodromy(system: DynamicalSystem, cycle: LimitCycle,
              tol: float = 1e-12) -> np.ndarray:
    return fundamental_matrix(system, cycle.anchor, cycle.period, tol=tol)


def _stable_directions_of_monodromy(M: np.ndarray, b_anchor: np.ndarray,
                                    period: float, cluster_tol: float = 1e-8):
    """Split the monodromy spectrum into the trivial multiplier and the rest.

    Returns (stable_multipliers, stable_basis).  The stable subspace is the
    annihilator of the left eigenvector of the trivial multiplier, which is
    invariant under M and avoids complex arithmetic for complex pairs.
    """
    d = M.shape[0]
    mults = np.linalg.eigvals(M)
    # trivial multiplier: the one closest to 1
    i_triv = int(np.argmin(np.abs(mults - 1.0)))
    if abs(mults[i_triv] - 1.0) > max(cluster_tol, 1e-6):
        raise NotNormallyContractingError(
            f"no Floquet multiplier within cluster tolerance of 1: {mults}")
    others = np.delete(mults, i_triv)
    if np.any(np.abs(others) >= 1.0):
        raise NotNormallyContractingError(
            f"non-trivial multiplier of modulus >= 1: {mults}")

    # stable invariant subspace: orthogonal complement of the left
    # eigenvector of the trivial multiplier
    w = np.linalg.eig(M.T)
    i_left = int(np.argmin(np.abs(w[0] - mults[i_triv])))
    left = np.real(w[1][:, i_left])
    left /= np.linalg.norm(left)
    # basis of {v : left . v = 0}, invariant under M
    Q = np.eye(d) - np.outer(left, left)
    u, s, _ = np.linalg.svd(Q)
    basis = u[:, : d - 1]
    return others, basis


def floquet_splitting(system: DynamicalSystem, attractor,
                      k_prime: int = 2, tol: float = 1e-12):
    """ManifoldFrames along the attractor samples.

    Equilibria get the trivial splitting (S = R^d, P = I).  Limit cycles get
    the Floquet splitting at the anchor, transported to the other samples by
    P(x.t) = Psi(x,t) P(x) Psi(x,t)^-1, which enforces invariance of the
    splitting by construction.
    """
    if isinstance(attractor, Equilibrium):
        return [_equilibrium_frame(system, attractor.x_star, k_prime)]
    if not isinstance(attractor, LimitCycle):
        raise TypeError("floquet_splitting handles equilibria and limit cycles")

    cycle = attractor
    d = system.dim
    M = monodromy(system, cycle, tol=tol)
    b0 = system.b(cycle.anchor)
    mult_stable, stable0 = _stable_directions_of_monodromy(M, b0, cycle.period)
    exps = -np.log(np.abs(mult_stable)) / cycle.period
    beta_star = float(np.min(exps))
    beta0 = beta_star / (2 * k_prime + 1)

    tau0 = b0 / np.linalg.norm(b0)
    P0 = _projection_from_bases(tau0[:, None], stable0)

    # transport the anchor projection around the cycle
    frames = []
    z0 = np.concatenate([cycle.anchor, np.eye(d).ravel()])
    res = solve_ivp(_variational_rhs(system, adjoint=False),
                    (0.0, cycle.period), z0, method="DOP853", rtol=tol,
                    atol=tol, t_eval=cycle.sample_times, dense_output=False)
    if res.status != 0:
        raise IntegrationFailure(res.message)
    for k, t in enumerate(cycle.sample_times):
        x = res.y[:d, k]
        Psi = res.y[d:, k].reshape(d, d)
        Pk = Psi @ P0 @ np.linalg.inv(Psi)
        bx = system.b(x)
        tau = (bx / np.linalg.norm(bx))[:, None]
        # stable basis: transported anchor basis, re-orthonormalized
        sb = Psi @ stable0
        sb, _ = np.linalg.qr(sb)
        frames.append(ManifoldFrame(x=x, tangent=tau, stable_basis=sb, P=Pk,
                                    beta0=beta0, beta_star=beta_star,
                                    k_prime=k_prime))
    return frames


def frame_to_record(frame: ManifoldFrame) -> dict:
    """JSON-serializable record of a frame."""
    return {
        "x": frame.x.tolist(),
        "tangent": frame.tangent.tolist(),
        "stable_basis": frame.stable_basis.tolist(),
        "P": frame.P.tolist(),
        "beta0": frame.beta0,
        "beta_star": frame.beta_star,
    }
