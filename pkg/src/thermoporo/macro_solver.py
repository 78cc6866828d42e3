"""Backward-Euler solver for the homogenized double-porosity model.

Five nodal fields on a box: displacement u, one pressure and one temperature
per component. Momentum is quasi-static; the two mass balances and two heat
balances carry the storage couplings and the interfacial exchange terms
zeta*(p1 - p2) and omega*(th1 - th2).

The coupled step operator is nonsymmetric: the pressure/temperature forces
in the momentum equation carry the transport-corrector tensors B_m and D_m,
while the storage terms under the time derivative carry the strain-average
tensors beta_m tr(C_m) and gamma_m tr(C_m). These coincide only in special
geometries, so the step system is solved as a general sparse system.

Each run keeps an energy ledger built from the tested weak forms:

  P1  storage quadratic form at the final time minus its initial value
  P2  numerical dissipation sum of the same form on the increments
  P3  coupling work of the strain rate against pressures and temperatures
  P5  diffusive dissipation
  P6  interfacial exchange dissipation
  P7  work of the sources

P1 + P2 + P3 + P5 + P6 - P7 vanishes identically for the discrete solution
(residual at solver tolerance); dropping P2 gives the continuum balance,
whose residual is the backward-Euler consistency error, first order in dt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import fem_core as fc
from .effective_coefficients import EffectiveCoefficients, voigt_to_tensor
from .errors import ConfigError
from .params import SolverOptions, SourceSpec

SCALAR_FIELDS = ("p1", "p2", "th1", "th2")
ALL_FIELDS = ("u",) + SCALAR_FIELDS
DEFAULT_DIRICHLET = ("u", "p1", "th1")


@dataclass
class MacroState:
    t: float
    u: np.ndarray
    p: dict          # m -> nodal array
    th: dict         # m -> nodal array

    def copy(self) -> "MacroState":
        return MacroState(self.t, self.u.copy(),
                          {m: self.p[m].copy() for m in (1, 2)},
                          {m: self.th[m].copy() for m in (1, 2)})


@dataclass
class LedgerRow:
    step: int
    t: float
    storage: float
    elastic: float
    p1_terminal: float
    p2_dissipation: float
    p3_coupling: float
    p5_diffusion: float
    p6_exchange: float
    p7_source: float
    residual_exact: float
    residual_continuum: float


class MacroModel:
    """Assembled homogenized model on an N^3 box grid."""

    def __init__(self, coeffs: EffectiveCoefficients, sources: SourceSpec,
                 resolution: int, dt: float,
                 dirichlet_fields=DEFAULT_DIRICHLET,
                 options: Optional[SolverOptions] = None):
        if dt <= 0:
            raise ConfigError("dt must be positive")
        self.coeffs = coeffs
        self.sources = sources
        self.dt = float(dt)
        self.opts = options or SolverOptions()
        self.grid = fc.LatticeGrid(resolution)
        grid = self.grid
        nn = grid.n_nodes
        self.nn = nn
        for f_name in dirichlet_fields:
            if f_name not in ALL_FIELDS:
                raise ConfigError(f"unknown field {f_name!r} in dirichlet list")
        self.dirichlet_fields = tuple(dirichlet_fields)

        # full-size operators (also used for ledger evaluation)
        self.M = fc.assemble_scalar_mass(grid)
        self.K_A = fc.assemble_voigt_stiffness(grid, coeffs.A_hom)
        self.K_p = {m: fc.assemble_scalar_stiffness(
            grid, None, matrix_coeff=coeffs.K[m]) for m in (1, 2)}
        self.K_t = {m: fc.assemble_scalar_stiffness(
            grid, None, matrix_coeff=coeffs.L[m]) for m in (1, 2)}
        # storage coupling: rows scalar, cols vector, int q T_m : e(u)
        self.T = {m: voigt_to_tensor(coeffs.storage_trace(m)) for m in (1, 2)}
        self.G_T = {m: fc.assemble_div_coupling(grid, M=self.T[m]) for m in (1, 2)}
        # momentum coupling: int p B_m : e(v) = transpose of the div wiring
        self.G_B = {m: fc.assemble_div_coupling(grid, M=coeffs.B[m]) for m in (1, 2)}
        self.G_D = {m: fc.assemble_div_coupling(grid, M=coeffs.D[m]) for m in (1, 2)}

        # free dofs per field
        bnd = grid.boundary_nodes
        self.free = {}
        for f_name in ALL_FIELDS:
            block = 3 if f_name == "u" else 1
            n_dofs = block * nn
            if f_name in self.dirichlet_fields:
                fixed = (3 * bnd[:, None] + np.arange(3)).ravel() if block == 3 \
                    else bnd
                keep = np.ones(n_dofs, dtype=bool)
                keep[fixed] = False
                self.free[f_name] = np.flatnonzero(keep)
            else:
                self.free[f_name] = np.arange(n_dofs)

        names = list(ALL_FIELDS)
        sizes = [self.free[f].shape[0] for f in names]
        bm = fc.BlockMatrix(names, sizes)
        dt_ = self.dt
        zs, os_ = coeffs.zeta_star, coeffs.omega_star
        fr = self.free

        def R(Afull, rname, cname):
            return Afull[fr[rname]][:, fr[cname]].tocsr()

        bm.set("u", "u", R(self.K_A, "u", "u"))
        for m in (1, 2):
            pm, tm = f"p{m}", f"th{m}"
            po, to = f"p{3-m}", f"th{3-m}"
            bm.set("u", pm, R((-self.G_B[m].T).tocsr(), "u", pm))
            bm.set("u", tm, R((-self.G_D[m].T).tocsr(), "u", tm))
            bm.set(pm, "u", R((coeffs.beta[m] * self.G_T[m]).tocsr(), pm, "u"))
            bm.set(tm, "u", R((coeffs.gamma[m] * self.G_T[m]).tocsr(), tm, "u"))
            bm.set(pm, pm, R((coeffs.phi_star[m] * self.M + dt_ * self.K_p[m]
                              + dt_ * zs * self.M).tocsr(), pm, pm))
            bm.set(pm, po, R((-dt_ * zs * self.M).tocsr(), pm, po))
            bm.set(tm, tm, R((coeffs.c_star[m] * self.M + dt_ * self.K_t[m]
                              + dt_ * os_ * self.M).tocsr(), tm, tm))
            bm.set(tm, to, R((-dt_ * os_ * self.M).tocsr(), tm, to))
            bm.set(pm, tm, R((coeffs.alpha_star[m] * self.M).tocsr(), pm, tm))
            bm.set(tm, pm, R((coeffs.alpha_star[m] * self.M).tocsr(), tm, pm))
        self.bm = bm
        u_nodes = np.unique(self.free["u"] // 3)
        self.solver = fc.MonolithicSolver(
            bm, tol=self.opts.tol_step, dense_limit=self.opts.dense_limit,
            direct_limit=self.opts.direct_limit,
            u_coords=grid.node_coords[u_nodes])

        # constant source loads (full length)
        fhom = (coeffs.volumes[1] * np.asarray(sources.f1)
                + coeffs.volumes[2] * np.asarray(sources.f2))
        self.load_u = fc.vector_load(grid, fhom)
        self.load_p = {m: fc.scalar_load(
            grid, coeffs.volumes[m] * (sources.g1 if m == 1 else sources.g2))
            for m in (1, 2)}
        self.load_th = {m: fc.scalar_load(
            grid, coeffs.volumes[m] * (sources.h1 if m == 1 else sources.h2))
            for m in (1, 2)}
        self._x_prev = None

    # ------------------------------------------------------------------
    def zero_state(self) -> MacroState:
        nn = self.nn
        return MacroState(0.0, np.zeros(3 * nn),
                          {1: np.zeros(nn), 2: np.zeros(nn)},
                          {1: np.zeros(nn), 2: np.zeros(nn)})

    def initial_state(self, initial: Optional[dict] = None) -> MacroState:
        """Build the initial state; nonzero pressures/temperatures trigger an
        elastostatic solve so u(0) satisfies the momentum balance."""
        st = self.zero_state()
        if not initial:
            return st
        coords = self.grid.node_coords
        for key, spec in initial.items():
            if key not in SCALAR_FIELDS:
                raise ConfigError(f"initial data only for p1/p2/th1/th2, got {key!r}")
            if isinstance(spec, (int, float)):
                vals = np.full(self.nn, float(spec))
            elif spec.get("kind") == "constant":
                vals = np.full(self.nn, float(spec["value"]))
            elif spec.get("kind") == "bump":
                amp = float(spec.get("amplitude", 1.0))
                vals = amp * np.prod(np.sin(np.pi * coords), axis=1)
            else:
                raise ConfigError(f"unknown initial kind {spec!r}")
            if key.startswith("p"):
                st.p[int(key[1])] = vals
            else:
                st.th[int(key[2])] = vals
        # constrained scalar fields must satisfy their boundary data
        for f_name in self.dirichlet_fields:
            if f_name == "u":
                continue
            arr = st.p[int(f_name[1])] if f_name.startswith("p") else \
                st.th[int(f_name[2])]
            bad = np.abs(arr[self.grid.boundary_nodes]).max() if \
                self.grid.boundary_nodes.size else 0.0
            if bad > 1e-12:
                raise ConfigError(
                    f"initial {f_name} violates its homogeneous boundary data")
        if any(np.any(st.p[m]) or np.any(st.th[m]) for m in (1, 2)):
            st.u = self._elastostatic(st)
        return st

    def _elastostatic(self, st: MacroState) -> np.ndarray:
        rhs = self.load_u.copy()
        for m in (1, 2):
            rhs += self.G_B[m].T @ st.p[m] + self.G_D[m].T @ st.th[m]
        fu = self.free["u"]
        A = self.K_A[fu][:, fu].tocsr()
        sol = fc.solve_constrained(
            fc.SparseSystem(A, rhs[fu], None), tol=self.opts.tol_step,
            dense_limit=self.opts.dense_limit)
        u = np.zeros(3 * self.nn)
        u[fu] = sol.values
        return u

    # ------------------------------------------------------------------
    def step(self, st: MacroState, extra_loads: Optional[dict] = None) -> MacroState:
        """One backward-Euler step; extra_loads maps field names to
        full-length consistent load vectors added to the constant sources
        (evaluated at the new time level)."""
        dt = self.dt
        co = self.coeffs
        rhs_full = {"u": self.load_u.copy()}
        for m in (1, 2):
            rp = dt * self.load_p[m] + co.phi_star[m] * (self.M @ st.p[m]) \
                + co.alpha_star[m] * (self.M @ st.th[m]) \
                + co.beta[m] * (self.G_T[m] @ st.u)
            rt = dt * self.load_th[m] + co.c_star[m] * (self.M @ st.th[m]) \
                + co.alpha_star[m] * (self.M @ st.p[m]) \
                + co.gamma[m] * (self.G_T[m] @ st.u)
            rhs_full[f"p{m}"] = rp
            rhs_full[f"th{m}"] = rt
        if extra_loads:
            for f_name, vec in extra_loads.items():
                scale = dt if f_name != "u" else 1.0
                rhs_full[f_name] = rhs_full[f_name] + scale * vec
        b = np.concatenate([rhs_full[f][self.free[f]] for f in ALL_FIELDS])
        x = self.solver.solve(b, x0=self._x_prev)
        self._x_prev = x
        parts = self.bm.unpack(x)
        new = self.zero_state()
        new.t = st.t + dt
        new.u[self.free["u"]] = parts["u"]
        for m in (1, 2):
            new.p[m][self.free[f"p{m}"]] = parts[f"p{m}"]
            new.th[m][self.free[f"th{m}"]] = parts[f"th{m}"]
        return new

    # ------------------------------------------------------------------
    def storage_energy(self, st: MacroState) -> float:
        co = self.coeffs
        E = 0.0
        for m in (1, 2):
            Mp = self.M @ st.p[m]
            Mt = self.M @ st.th[m]
            E += 0.5 * (co.phi_star[m] * (st.p[m] @ Mp)
                        + 2.0 * co.alpha_star[m] * (st.p[m] @ Mt)
                        + co.c_star[m] * (st.th[m] @ Mt))
        return E

    def elastic_energy(self, st: MacroState) -> float:
        return 0.5 * float(st.u @ (self.K_A @ st.u))

    def _storage_increment_form(self, dp, dth) -> float:
        co = self.coeffs
        E = 0.0
        for m in (1, 2):
            Mp = self.M @ dp[m]
            Mt = self.M @ dth[m]
            E += 0.5 * (co.phi_star[m] * (dp[m] @ Mp)
                        + 2.0 * co.alpha_star[m] * (dp[m] @ Mt)
                        + co.c_star[m] * (dth[m] @ Mt))
        return E

    def run(self, st0: MacroState, n_steps: int,
            source_fn: Optional[Callable[[float], dict]] = None,
            keep_states: bool = False):
        """March n_steps and return (final state, ledger rows, states?)."""
        co = self.coeffs
        st = st0.copy()
        states = [st.copy()] if keep_states else None
        E0 = self.storage_energy(st0)
        P2 = P3 = P5 = P6 = P7 = 0.0
        rows = []
        for k in range(1, n_steps + 1):
            t_new = st.t + self.dt
            extra = source_fn(t_new) if source_fn else None
            new = self.step(st, extra_loads=extra)
            dp = {m: new.p[m] - st.p[m] for m in (1, 2)}
            dth = {m: new.th[m] - st.th[m] for m in (1, 2)}
            du = new.u - st.u
            P2 += self._storage_increment_form(dp, dth)
            for m in (1, 2):
                Gdu = self.G_T[m] @ du
                P3 += co.beta[m] * (Gdu @ new.p[m]) + co.gamma[m] * (Gdu @ new.th[m])
                P5 += self.dt * (new.p[m] @ (self.K_p[m] @ new.p[m])
                                 + new.th[m] @ (self.K_t[m] @ new.th[m]))
                gl = self.load_p[m] + (extra.get(f"p{m}", 0.0) if extra else 0.0)
                hl = self.load_th[m] + (extra.get(f"th{m}", 0.0) if extra else 0.0)
                P7 += self.dt * float(gl @ new.p[m]) + self.dt * float(hl @ new.th[m])
            jp = new.p[1] - new.p[2]
            jt = new.th[1] - new.th[2]
            P6 += self.dt * (co.zeta_star * (jp @ (self.M @ jp))
                             + co.omega_star * (jt @ (self.M @ jt)))
            P1 = self.storage_energy(new) - E0
            scale = max(abs(P1), P2, abs(P3), P5, P6, abs(P7), 1e-300)
            res_exact = (P1 + P2 + P3 + P5 + P6 - P7) / scale
            res_cont = (P1 + P3 + P5 + P6 - P7) / scale
            rows.append(LedgerRow(
                step=k, t=t_new, storage=self.storage_energy(new),
                elastic=self.elastic_energy(new), p1_terminal=P1,
                p2_dissipation=P2, p3_coupling=P3, p5_diffusion=P5,
                p6_exchange=P6, p7_source=P7,
                residual_exact=res_exact, residual_continuum=res_cont))
            st = new
            if keep_states:
                states.append(st.copy())
        return (st, rows, states) if keep_states else (st, rows)
