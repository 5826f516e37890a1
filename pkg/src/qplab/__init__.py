"""qplab: numerical laboratory for Freidlin-Wentzell quasi-potentials.

Three independent routes to the quasi-potential V of a randomly perturbed
dynamical system around an equilibrium or limit-cycle attractor:

  * minimum-action path optimization          (qplab.quasipotential)
  * Hamiltonian unstable-manifold chart       (qplab.manifold)
  * small-noise Fokker-Planck eigen-solves    (qplab.fokker_planck)

plus structural cross-checks: HJE residuals, Hessian structure on the
attractor, flux orthogonality / Pythagoras / Lyapunov identities, and the
thermodynamic functionals (qplab.decomposition).
"""

from .systems import builtin_scenario, list_scenarios, load_scenario

__all__ = ["builtin_scenario", "list_scenarios", "load_scenario"]
__version__ = "0.1.0"
