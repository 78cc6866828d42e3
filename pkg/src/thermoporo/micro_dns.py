"""Direct simulation of the two-component medium at finite interface period.

The micro domain is the unit box tiled by 1/eps copies of the unit cell per
axis. Displacement is continuous everywhere; each pressure and temperature
field lives on its own phase, so interface nodes carry one unknown per side.
The imperfect contact enters as jump terms on the interface: the normal flux
equals an eps-scaled conductance times the jump,

    flux = eps * zeta(x/eps) * (p_other - p_self),

which keeps the total interface exchange bounded as eps -> 0 and is what the
homogenized exchange coefficients integrate. Perfect contact ("merged" mode)
replaces the two one-sided fields by a single continuous field with no
interface terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem_core as fc
from .errors import ConfigError, DeskCapError
from .params import SolverOptions, SourceSpec, TwoPhaseMaterial
from .unit_cell import MicroMesh

DEFAULT_DIRICHLET = ("u", "p1", "th1")


@dataclass
class MicroState:
    t: float
    u: np.ndarray        # (3 * n_nodes,)
    p: dict              # m -> (n_m,) one-sided nodal values (or merged field at m=1)
    th: dict

    def copy(self) -> "MicroState":
        return MicroState(self.t, self.u.copy(),
                          {m: v.copy() for m, v in self.p.items()},
                          {m: v.copy() for m, v in self.th.items()})


class MicroModel:
    """Assembled micro problem on a tiled mesh."""

    def __init__(self, mesh: MicroMesh, material: TwoPhaseMaterial,
                 sources: SourceSpec, dt: float, contact: str = "barrier",
                 dirichlet_fields=DEFAULT_DIRICHLET,
                 options: Optional[SolverOptions] = None):
        if contact not in ("barrier", "perfect"):
            raise ConfigError(f"contact mode {contact!r} not in barrier|perfect")
        if dt <= 0:
            raise ConfigError("dt must be positive")
        self.mesh = mesh
        self.material = material
        self.sources = sources
        self.dt = float(dt)
        self.contact = contact
        self.opts = options or SolverOptions()
        material.validate()

        n_unknowns = mesh.n_unknowns() if contact == "barrier" \
            else 3 * mesh.grid.n_nodes + 2 * mesh.grid.n_nodes
        if n_unknowns > self.opts.desk_cap and not self.opts.override_desk_cap:
            raise DeskCapError(
                f"{n_unknowns} unknowns exceed the configured cap "
                f"{self.opts.desk_cap}; raise it explicitly to proceed")
        self.n_unknowns = n_unknowns
        self._assemble(dirichlet_fields)

    # ------------------------------------------------------------------
    def _assemble(self, dirichlet_fields):
        mesh, mat, dt = self.mesh, self.material, self.dt
        grid = mesh.grid
        labels = mesh.labels
        per = {name: np.where(labels == 1, getattr(mat.phase1, name),
                              getattr(mat.phase2, name))
               for name in ("lam", "mu", "beta", "gamma", "alpha", "phi",
                            "kappa", "lam_hat", "c")}
        self.K_A = fc.assemble_elastic_stiffness(grid, per["lam"], per["mu"])

        merged = self.contact == "perfect"
        if merged:
            self.fields = ("u", "p1", "th1")
            self.nred = {1: grid.n_nodes}
            self.maps = {1: np.arange(grid.n_nodes)}
            masks = {1: None}
            phases = (1,)
        else:
            self.fields = ("u", "p1", "p2", "th1", "th2")
            self.nred, self.maps, masks = {}, {}, {}
            for m in (1, 2):
                mp, nr = mesh.phase_dof_map(m)
                self.nred[m] = nr
                self.maps[m] = mp
                masks[m] = mesh.mask(m)
            phases = (1, 2)
        self.phases = phases

        # per-field operators
        self.M_s, self.K_p, self.K_t, self.G = {}, {}, {}, {}
        coeff = {}
        for nm in ("phi", "alpha", "c", "beta", "gamma", "kappa", "lam_hat"):
            coeff[nm] = {}
        for m in phases:
            mask = masks[m]
            sel = slice(None) if mask is None else mask
            for nm in coeff:
                coeff[nm][m] = per[nm][sel]
            self.M_s[m] = fc.assemble_scalar_mass(
                grid, 1.0, mask=mask, n_dofs=self.nred[m],
                dof_of_node=None if merged else self.maps[m])
            self.K_p[m] = fc.assemble_scalar_stiffness(
                grid, coeff["kappa"][m], mask=mask, n_dofs=self.nred[m],
                dof_of_node=None if merged else self.maps[m])
            self.K_t[m] = fc.assemble_scalar_stiffness(
                grid, coeff["lam_hat"][m], mask=mask, n_dofs=self.nred[m],
                dof_of_node=None if merged else self.maps[m])
            self.G[m] = fc.assemble_div_coupling(
                grid, mask=mask, n_scalar=self.nred[m],
                dof_of_node=None if merged else self.maps[m])
        # weighted mass matrices (coefficients vary by element only through
        # the phase, so per-element weights are exact)
        self.M_phi, self.M_alpha, self.M_c = {}, {}, {}
        self.Gb, self.Gg = {}, {}
        for m in phases:
            mask = masks[m]
            mp = None if merged else self.maps[m]
            self.M_phi[m] = fc.assemble_scalar_mass(
                grid, coeff["phi"][m], mask=mask, n_dofs=self.nred[m], dof_of_node=mp)
            self.M_alpha[m] = fc.assemble_scalar_mass(
                grid, coeff["alpha"][m], mask=mask, n_dofs=self.nred[m], dof_of_node=mp)
            self.M_c[m] = fc.assemble_scalar_mass(
                grid, coeff["c"][m], mask=mask, n_dofs=self.nred[m], dof_of_node=mp)
            if merged:
                # a single continuous field crosses both phases
                self.Gb[m] = fc.assemble_div_coupling(grid, scale=per["beta"])
                self.Gg[m] = fc.assemble_div_coupling(grid, scale=per["gamma"])
            else:
                self.Gb[m] = (mat.phase(m).beta * self.G[m]).tocsr()
                self.Gg[m] = (mat.phase(m).gamma * self.G[m]).tocsr()

        # interface jump matrices
        if not merged:
            tri = mesh.interface.node_ids(grid)     # (nf, 4) geometric nodes
            f1 = self.maps[1][tri]
            f2 = self.maps[2][tri]
            zeta_qp = mesh.barrier_qp(mat.zeta)
            omega_qp = mesh.barrier_qp(mat.omega)
            self.Jp = fc.assemble_interface_coupling(
                f1, f2, zeta_qp, grid.h, self.nred[1], self.nred[2])
            self.Jt = fc.assemble_interface_coupling(
                f1, f2, omega_qp, grid.h, self.nred[1], self.nred[2])

        # Dirichlet reductions
        bnd = grid.boundary_nodes
        self.free = {}
        for f_name in self.fields:
            if f_name == "u":
                n_dofs = 3 * grid.n_nodes
                if "u" in dirichlet_fields:
                    fixed = (3 * bnd[:, None] + np.arange(3)).ravel()
                else:
                    fixed = np.array([], dtype=np.int64)
            else:
                m = int(f_name[-1])
                n_dofs = self.nred[m]
                if f_name in dirichlet_fields:
                    if merged:
                        fixed = bnd
                    else:
                        fixed = self.maps[m][bnd]
                        fixed = fixed[fixed >= 0]
                else:
                    fixed = np.array([], dtype=np.int64)
            keep = np.ones(n_dofs, dtype=bool)
            keep[fixed] = False
            self.free[f_name] = np.flatnonzero(keep)

        names = list(self.fields)
        sizes = [self.free[f].shape[0] for f in names]
        bm = fc.BlockMatrix(names, sizes)
        fr = self.free

        def R(Afull, rn, cn):
            return Afull[fr[rn]][:, fr[cn]].tocsr()

        bm.set("u", "u", R(self.K_A, "u", "u"))
        for m in phases:
            pm, tm = f"p{m}", f"th{m}"
            bm.set("u", pm, R((-self.Gb[m].T).tocsr(), "u", pm))
            bm.set("u", tm, R((-self.Gg[m].T).tocsr(), "u", tm))
            bm.set(pm, "u", R(self.Gb[m], pm, "u"))
            bm.set(tm, "u", R(self.Gg[m], tm, "u"))
            Dp = (self.M_phi[m] + dt * self.K_p[m]).tocsr()
            Dt = (self.M_c[m] + dt * self.K_t[m]).tocsr()
            if not merged:
                idx = m - 1
                Dp = (Dp + dt * self.Jp[3 * idx]).tocsr()
                Dt = (Dt + dt * self.Jt[3 * idx]).tocsr()
                other = 2 if m == 1 else 1
                po, to = f"p{other}", f"th{other}"
                off = self.Jp[1] if m == 1 else self.Jp[2]
                bm.set(pm, po, R((dt * off).tocsr(), pm, po))
                off_t = self.Jt[1] if m == 1 else self.Jt[2]
                bm.set(tm, to, R((dt * off_t).tocsr(), tm, to))
            bm.set(pm, pm, Dp[fr[pm]][:, fr[pm]].tocsr())
            bm.set(tm, tm, Dt[fr[tm]][:, fr[tm]].tocsr())
            bm.set(pm, tm, R((self.M_alpha[m]).tocsr(), pm, tm))
            bm.set(tm, pm, R((self.M_alpha[m]).tocsr(), tm, pm))
        self.bm = bm
        u_nodes = np.unique(self.free["u"] // 3)
        self.solver = fc.MonolithicSolver(
            bm, tol=self.opts.tol_step, dense_limit=self.opts.dense_limit,
            direct_limit=self.opts.direct_limit,
            u_coords=grid.node_coords[u_nodes])

        # loads
        src = self.sources
        self.load_u = (fc.vector_load(grid, src.f1, mask=mesh.mask(1))
                       + fc.vector_load(grid, src.f2, mask=mesh.mask(2)))
        self.load_p, self.load_th = {}, {}
        for m in phases:
            if merged:
                self.load_p[m] = (fc.scalar_load(grid, src.g1, mask=mesh.mask(1))
                                  + fc.scalar_load(grid, src.g2, mask=mesh.mask(2)))
                self.load_th[m] = (fc.scalar_load(grid, src.h1, mask=mesh.mask(1))
                                   + fc.scalar_load(grid, src.h2, mask=mesh.mask(2)))
            else:
                g = src.g1 if m == 1 else src.g2
                h = src.h1 if m == 1 else src.h2
                self.load_p[m] = fc.scalar_load(
                    grid, g, mask=mesh.mask(m), n_dofs=self.nred[m],
                    dof_of_node=self.maps[m])
                self.load_th[m] = fc.scalar_load(
                    grid, h, mask=mesh.mask(m), n_dofs=self.nred[m],
                    dof_of_node=self.maps[m])
        self._x_prev = None

    # ------------------------------------------------------------------
    def zero_state(self) -> MicroState:
        return MicroState(0.0, np.zeros(3 * self.mesh.grid.n_nodes),
                          {m: np.zeros(self.nred[m]) for m in self.phases},
                          {m: np.zeros(self.nred[m]) for m in self.phases})

    def initial_state(self, initial: Optional[dict] = None) -> MicroState:
        st = self.zero_state()
        if not initial:
            return st
        for key, spec in initial.items():
            if key == "u":
                raise ConfigError("initial displacement is determined by the "
                                  "momentum balance; specify p/th only")
            m = int(key[-1])
            if m not in self.phases:
                raise ConfigError(f"field {key!r} not present in {self.contact} mode")
            coords = self.mesh.grid.node_coords
            if self.contact == "barrier":
                nodes = self.mesh.phase_nodes(m)
                coords = coords[nodes]
            if isinstance(spec, (int, float)):
                vals = np.full(coords.shape[0], float(spec))
            elif spec.get("kind") == "constant":
                vals = np.full(coords.shape[0], float(spec["value"]))
            elif spec.get("kind") == "bump":
                amp = float(spec.get("amplitude", 1.0))
                vals = amp * np.prod(np.sin(np.pi * coords), axis=1)
            else:
                raise ConfigError(f"unknown initial kind {spec!r}")
            if key.startswith("p"):
                st.p[m] = vals
            else:
                st.th[m] = vals
        st.u = self._elastostatic(st)
        return st

    def _elastostatic(self, st: MicroState) -> np.ndarray:
        rhs = self.load_u.copy()
        for m in self.phases:
            rhs += self.Gb[m].T @ st.p[m] + self.Gg[m].T @ st.th[m]
        fu = self.free["u"]
        A = self.K_A[fu][:, fu].tocsr()
        sol = fc.solve_constrained(
            fc.SparseSystem(A, rhs[fu], None), tol=self.opts.tol_step,
            dense_limit=self.opts.dense_limit)
        u = np.zeros(3 * self.mesh.grid.n_nodes)
        u[fu] = sol.values
        return u

    def step(self, st: MicroState) -> MicroState:
        dt = self.dt
        rhs_full = {"u": self.load_u.copy()}
        for m in self.phases:
            rp = dt * self.load_p[m] + self.M_phi[m] @ st.p[m] \
                + self.M_alpha[m] @ st.th[m] + self.Gb[m] @ st.u
            rt = dt * self.load_th[m] + self.M_c[m] @ st.th[m] \
                + self.M_alpha[m] @ st.p[m] + self.Gg[m] @ st.u
            rhs_full[f"p{m}"] = rp
            rhs_full[f"th{m}"] = rt
        b = np.concatenate([rhs_full[f][self.free[f]] for f in self.fields])
        x = self.solver.solve(b, x0=self._x_prev)
        self._x_prev = x
        parts = self.bm.unpack(x)
        new = self.zero_state()
        new.t = st.t + dt
        new.u[self.free["u"]] = parts["u"]
        for m in self.phases:
            new.p[m][self.free[f"p{m}"]] = parts[f"p{m}"]
            new.th[m][self.free[f"th{m}"]] = parts[f"th{m}"]
        return new

    def run(self, st0: MicroState, n_steps: int, keep_states: bool = True):
        st = st0.copy()
        states = [st.copy()]
        for _ in range(n_steps):
            st = self.step(st)
            if keep_states:
                states.append(st.copy())
        return st, (states if keep_states else None)

    # ------------------------------------------------------------------
    def norms(self, st: MicroState) -> dict:
        """L2 norms of the fields (mass-matrix weighted)."""
        out = {}
        Mu = fc.assemble_scalar_mass(self.mesh.grid)
        uu = st.u.reshape(-1, 3)
        out["u"] = float(np.sqrt(sum(uu[:, c] @ (Mu @ uu[:, c]) for c in range(3))))
        for m in self.phases:
            out[f"p{m}"] = float(np.sqrt(st.p[m] @ (self.M_s[m] @ st.p[m])))
            out[f"th{m}"] = float(np.sqrt(st.th[m] @ (self.M_s[m] @ st.th[m])))
        return out
