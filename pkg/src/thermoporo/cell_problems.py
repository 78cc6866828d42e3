"""Periodic cell problems on the two-phase unit cell.

Three families of correctors are solved on the voxel cell:

* elastic correctors, one per symmetrized unit macroscopic strain, posed on
  the whole cell with displacement continuous across the interface;
* pressure correctors, one per unit macroscopic pressure gradient and phase,
  posed on that phase only with zero normal flux on the interface (the
  barrier suppresses flux at leading order, so each phase sees an insulated
  interface);
* temperature correctors, same structure with the heat conductivities.

All problems are singular (periodic Neumann); solutions are fixed by
mass-weighted zero mean per connected component of their domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem_core as fc
from .errors import MaterialError
from .params import SolverOptions, TwoPhaseMaterial
from .unit_cell import UnitCellMesh

FLUX_READING = "per-phase-zero-flux"


def unit_strain(kl: int) -> np.ndarray:
    """Symmetrized unit strain for Voigt slot kl, as a 3x3 tensor."""
    k, l = fc.VOIGT[kl]
    E = np.zeros((3, 3))
    E[k, l] += 0.5
    E[l, k] += 0.5
    return E


def iso_stress_voigt(lam: float, mu: float, E3: np.ndarray) -> np.ndarray:
    """Raw Voigt entries of lam*tr(E)I + 2 mu E."""
    S3 = lam * np.trace(E3) * np.eye(3) + 2.0 * mu * E3
    return np.array([S3[r, s] for (r, s) in fc.VOIGT])


@dataclass
class SolveLog:
    problem: str
    unknowns: int
    iterations: int
    residual: float


@dataclass
class CellCorrectors:
    """Corrector fields plus the element matrices reused for upscaling."""

    mesh: UnitCellMesh
    material: TwoPhaseMaterial
    w: np.ndarray                       # (6, 3*n_nodes), Voigt-ordered
    pi: dict                            # m -> (3, n_red_m)
    theta: dict                         # m -> (3, n_red_m)
    K_elastic: object                   # global elastic stiffness (csr)
    prestress_loads: np.ndarray         # (6, 3*n_nodes), int A E^kl : e(v)
    flux_reading: str = FLUX_READING
    logs: list = field(default_factory=list)

    def scalar_full(self, which: str, m: int, i: int) -> np.ndarray:
        """Corrector as a full-length nodal array (zero outside its phase)."""
        red = (self.pi if which == "pi" else self.theta)[m][i]
        out = np.zeros(self.mesh.grid.n_nodes)
        out[self.mesh.phase_nodes(m)] = red
        return out

    def strain_integrals(self, m: int) -> np.ndarray:
        """S[ij, kl] = int_{Y_m} e_ij(w^kl), raw tensor entries (6x6)."""
        tab = fc.tables(self.mesh.grid.h)
        elems = self.mesh.grid.elems[self.mesh.mask(m)]
        vdofs = fc.vector_dofs(elems)
        S = np.empty((6, 6))
        for kl in range(6):
            we = self.w[kl][vdofs]                      # (ne, 24)
            S[:, kl] = np.einsum("ed,dm->m", we, tab.ESTR)
        return S

    def grad_integrals(self, which: str, m: int) -> np.ndarray:
        """G[i, j] = int_{Y_m} d(corrector^j)/dy_i for the given family."""
        tab = fc.tables(self.mesh.grid.h)
        mp, _ = self.mesh.phase_dof_map(m)
        elems = mp[self.mesh.grid.elems[self.mesh.mask(m)]]
        fields = (self.pi if which == "pi" else self.theta)[m]
        G = np.empty((3, 3))
        for j in range(3):
            fe = fields[j][elems]                       # (ne, 8)
            G[:, j] = np.einsum("ea,ai->i", fe, tab.GINT)
        return G


def solve_cell_problems(mesh: UnitCellMesh, material: TwoPhaseMaterial,
                        options: SolverOptions = None) -> CellCorrectors:
    """Solve all corrector problems and return the bundle."""
    opts = options or SolverOptions()
    material.validate()
    grid = mesh.grid
    tab = fc.tables(grid.h)
    logs: list = []

    lam_e = np.where(mesh.labels == 1, material.phase1.lam, material.phase2.lam)
    mu_e = np.where(mesh.labels == 1, material.phase1.mu, material.phase2.mu)
    K = fc.assemble_elastic_stiffness(grid, lam_e, mu_e)

    node_w = fc.mass_weights(grid)
    w3 = np.repeat(node_w, 3)
    con_u = fc.MeanZeroConstraint([np.arange(grid.n_nodes)], block=3, weights=w3)

    # prestress loads: per phase the local element load is ESTR @ (W sigma)
    loads = np.zeros((6, 3 * grid.n_nodes))
    Wv = fc.VOIGT_WEIGHTS
    vdofs_all = {m: fc.vector_dofs(grid.elems[mesh.mask(m)]) for m in (1, 2)}
    for kl in range(6):
        E3 = unit_strain(kl)
        for m in (1, 2):
            ph = material.phase(m)
            sig = iso_stress_voigt(ph.lam, ph.mu, E3)
            local = tab.ESTR @ (Wv * sig)               # (24,)
            dofs = vdofs_all[m]
            np.add.at(loads[kl], dofs.ravel(),
                      np.broadcast_to(local, dofs.shape).ravel())

    w = np.zeros((6, 3 * grid.n_nodes))
    for kl in range(6):
        sys = fc.SparseSystem(K, -loads[kl], con_u)
        sol = fc.solve_constrained(sys, tol=opts.tol_cell,
                                   dense_limit=opts.dense_limit)
        w[kl] = sol.values
        logs.append(SolveLog(f"elastic-w{kl}", w.shape[1], sol.iterations,
                             sol.residual))

    pi: dict = {}
    theta: dict = {}
    for m in (1, 2):
        mp, nred = mesh.phase_dof_map(m)
        mask = mesh.mask(m)
        comps = mesh.phase_node_components(m)
        weights = fc.mass_weights(grid, mask=mask, n_dofs=nred, dof_of_node=mp)
        con = fc.MeanZeroConstraint(comps, block=1, weights=weights)
        # unit-gradient load: g_i[dof] = int_{Y_m} dN_dof/dy_i
        elems_red = mp[grid.elems[mask]]
        gvecs = np.zeros((3, nred))
        for i in range(3):
            np.add.at(gvecs[i], elems_red.ravel(),
                      np.broadcast_to(tab.GINT[:, i], elems_red.shape).ravel())
        for which, diff in (("pi", material.phase(m).kappa),
                            ("theta", material.phase(m).lam_hat)):
            if diff <= 0:
                raise MaterialError(f"phase {m} diffusivity must be positive")
            Km = fc.assemble_scalar_stiffness(grid, diff, mask=mask, n_dofs=nred,
                                              dof_of_node=mp)
            sols = np.zeros((3, nred))
            for i in range(3):
                sys = fc.SparseSystem(Km, -diff * gvecs[i], con)
                sol = fc.solve_constrained(sys, tol=opts.tol_cell,
                                           dense_limit=opts.dense_limit)
                sols[i] = sol.values
                logs.append(SolveLog(f"{which}{m}-grad{i}", nred,
                                     sol.iterations, sol.residual))
            if which == "pi":
                pi[m] = sols
            else:
                theta[m] = sols

    return CellCorrectors(mesh=mesh, material=material, w=w, pi=pi, theta=theta,
                          K_elastic=K, prestress_loads=loads, logs=logs)
