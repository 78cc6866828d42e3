"""Verification instruments: corrector reconstruction, scale-convergence
studies, energy-balance residuals and manufactured-solution order checks.

The central object is the corrector-augmented reconstruction of a macro
state at micro resolution,

    u_hat(x)  = u0(x)  + eps * w^kl(x/eps)  e_kl(u0)(x)
    p_hat(x)  = p0(x)  + eps * pi^i(x/eps)  d_i p0(x)      (per phase)
    th_hat(x) = th0(x) + eps * vth^i(x/eps) d_i th0(x)     (per phase)

whose distance to the resolved micro solution should shrink as eps does,
and faster than the distance to the plain macro fields.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import fem_core as fc
from .cell_problems import CellCorrectors
from .effective_coefficients import EffectiveCoefficients
from .errors import ConsistencyError
from .macro_solver import MacroModel, MacroState
from .micro_dns import MicroModel
from .params import SolverOptions, SourceSpec, TwoPhaseMaterial
from .unit_cell import MicroMesh, UnitCellMesh


class CorrectorSampler:
    """Evaluates macro fields and their corrector augmentations at arbitrary
    points of the micro domain."""

    def __init__(self, correctors: CellCorrectors, macro_grid, eps: float):
        self.correctors = correctors
        self.macro_grid = macro_grid
        self.eps = float(eps)
        cell = correctors.mesh
        # nodal layout per corrector slot: (n_nodes, 3) per kl
        self._w_by_slot = [correctors.w[kl].reshape(-1, 3) for kl in range(6)]
        self._pi_full = {m: np.stack([correctors.scalar_full("pi", m, i)
                                      for i in range(3)], axis=1) for m in (1, 2)}
        self._th_full = {m: np.stack([correctors.scalar_full("theta", m, i)
                                      for i in range(3)], axis=1) for m in (1, 2)}
        h_micro = eps / cell.resolution
        if h_micro > 2.0 * macro_grid.h:
            warnings.warn(
                "micro sampling lattice is more than twice as coarse as the "
                "macro grid; interpolated comparisons will be under-resolved",
                stacklevel=2)

    def cell_coords(self, pts: np.ndarray) -> np.ndarray:
        return np.mod(np.asarray(pts, float) / self.eps, 1.0)

    def displacement(self, st: MacroState, pts: np.ndarray,
                     corrected: bool = True) -> np.ndarray:
        u0 = st.u.reshape(-1, 3)
        vals, grads = fc.eval_nodal(self.macro_grid, u0, pts, gradients=True)
        if not corrected:
            return vals
        # raw strain entries at the sample points
        e = np.empty((pts.shape[0], 6))
        for slot, (r, s) in enumerate(fc.VOIGT):
            e[:, slot] = 0.5 * (grads[:, r, s] + grads[:, s, r])
        y = self.cell_coords(pts)
        out = vals.copy()
        for slot in range(6):
            wv = fc.eval_nodal(self.correctors.mesh.grid, self._w_by_slot[slot], y)
            out += self.eps * fc.VOIGT_WEIGHTS[slot] * e[:, slot: slot + 1] * wv
        return out

    def scalar(self, which: str, m: int, nodal: np.ndarray, pts: np.ndarray,
               corrected: bool = True) -> np.ndarray:
        vals, grads = fc.eval_nodal(self.macro_grid, nodal, pts, gradients=True)
        if not corrected:
            return vals
        y = self.cell_coords(pts)
        table = self._pi_full if which == "pi" else self._th_full
        cv = fc.eval_nodal(self.correctors.mesh.grid, table[m], y)  # (npts, 3)
        return vals + self.eps * np.einsum("pi,pi->p", cv, grads)


@dataclass
class ConvergenceRow:
    field: str
    eps: float
    plain: float
    corrected: float


@dataclass
class ConvergenceReport:
    rows: list
    dt: float
    n_steps: int
    macro_resolution: int
    cell_resolution: int

    def series(self, field: str):
        rs = sorted((r for r in self.rows if r.field == field),
                    key=lambda r: -r.eps)
        return ([r.eps for r in rs], [r.plain for r in rs],
                [r.corrected for r in rs])

    def monotone(self, field: str, which: str = "corrected") -> bool:
        _, plain, corr = self.series(field)
        vals = corr if which == "corrected" else plain
        return all(b < a * (1.0 + 1e-12) for a, b in zip(vals, vals[1:]))

    def corrected_improves(self, field: str) -> bool:
        _, plain, corr = self.series(field)
        return corr[-1] < plain[-1]

    def to_json_dict(self) -> dict:
        return {
            "format": "scale-convergence-report",
            "version": 1,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "macro_resolution": self.macro_resolution,
            "cell_resolution": self.cell_resolution,
            "rows": [{"field": r.field, "eps": r.eps, "plain": r.plain,
                      "corrected": r.corrected} for r in self.rows],
        }

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=1, sort_keys=True)
            f.write("\n")

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["field", "eps", "plain_error", "corrected_error"])
            for r in sorted(self.rows, key=lambda r: (r.field, -r.eps)):
                w.writerow([r.field, repr(r.eps), f"{r.plain:.16e}",
                            f"{r.corrected:.16e}"])


def convergence_study(cell: UnitCellMesh, material: TwoPhaseMaterial,
                      sources: SourceSpec, *, eps_list, macro_resolution: int,
                      dt: float, n_steps: int, initial=None,
                      dirichlet_fields=("u", "p1", "th1"),
                      options: SolverOptions = None,
                      coeffs: EffectiveCoefficients = None,
                      correctors: CellCorrectors = None) -> ConvergenceReport:
    """Space-time L2 distances between resolved micro runs and the macro run,
    with and without corrector augmentation, for each eps."""
    from .effective_coefficients import upscale

    opts = options or SolverOptions()
    if coeffs is None or correctors is None:
        coeffs, correctors = upscale(cell, material, opts)
    macro = MacroModel(coeffs, sources, macro_resolution, dt,
                       dirichlet_fields=dirichlet_fields, options=opts)
    st0 = macro.initial_state(initial)
    _, _, macro_states = macro.run(st0, n_steps, keep_states=True)

    rows = []
    for eps in eps_list:
        mesh = MicroMesh(cell, eps)
        model = MicroModel(mesh, material, sources, dt,
                           dirichlet_fields=dirichlet_fields, options=opts)
        mst0 = model.initial_state(initial)
        _, micro_states = model.run(mst0, n_steps, keep_states=True)
        sampler = CorrectorSampler(correctors, macro.grid, eps)
        grid = mesh.grid
        Mfull = fc.assemble_scalar_mass(grid)
        pts = grid.node_coords
        acc = {f: np.zeros(2) for f in ("u", "p1", "p2", "th1", "th2")}
        ref = {f: 0.0 for f in acc}
        for k in range(1, n_steps + 1):
            mac = macro_states[k]
            mic = micro_states[k]
            u_plain = sampler.displacement(mac, pts, corrected=False)
            u_corr = sampler.displacement(mac, pts, corrected=True)
            ue = mic.u.reshape(-1, 3)
            for j, u_ref in enumerate((u_plain, u_corr)):
                d = ue - u_ref
                acc["u"][j] += dt * sum(d[:, c] @ (Mfull @ d[:, c])
                                        for c in range(3))
            ref["u"] += dt * sum(ue[:, c] @ (Mfull @ ue[:, c]) for c in range(3))
            for m in (1, 2):
                nodes = mesh.phase_nodes(m)
                ppts = pts[nodes]
                for fname, which, mac_nodal, mic_red in (
                        (f"p{m}", "pi", mac.p[m], mic.p[m]),
                        (f"th{m}", "theta", mac.th[m], mic.th[m])):
                    plain = sampler.scalar(which, m, mac_nodal, ppts,
                                           corrected=False)
                    corr = sampler.scalar(which, m, mac_nodal, ppts,
                                          corrected=True)
                    Ms = model.M_s[m]
                    for j, r in enumerate((plain, corr)):
                        d = mic_red - r
                        acc[fname][j] += dt * (d @ (Ms @ d))
                    ref[fname] += dt * (mic_red @ (Ms @ mic_red))
        for fname in acc:
            scale = np.sqrt(ref[fname]) if ref[fname] > 0 else 1.0
            rows.append(ConvergenceRow(
                field=fname, eps=float(eps),
                plain=float(np.sqrt(acc[fname][0]) / scale),
                corrected=float(np.sqrt(acc[fname][1]) / scale)))
    return ConvergenceReport(rows=rows, dt=dt, n_steps=n_steps,
                             macro_resolution=macro_resolution,
                             cell_resolution=cell.resolution)


def energy_identity_residual(ledger_rows) -> dict:
    """Final cumulative energy-balance residuals of a macro run."""
    last = ledger_rows[-1]
    return {"exact": abs(last.residual_exact),
            "continuum": abs(last.residual_continuum)}


def stationary_state(model: MacroModel) -> MacroState:
    """Direct solve of the stationary limit of the model (time derivatives
    dropped, same boundary conditions and sources)."""
    co = model.coeffs
    names = list(model.bm.names)
    sizes = list(model.bm.sizes)
    bm = fc.BlockMatrix(names, sizes)
    fr = model.free

    def R(Afull, rn, cn):
        return Afull[fr[rn]][:, fr[cn]].tocsr()

    bm.set("u", "u", R(model.K_A, "u", "u"))
    for m in (1, 2):
        pm, tm, po, to = f"p{m}", f"th{m}", f"p{3-m}", f"th{3-m}"
        bm.set("u", pm, R((-model.G_B[m].T).tocsr(), "u", pm))
        bm.set("u", tm, R((-model.G_D[m].T).tocsr(), "u", tm))
        bm.set(pm, pm, R((model.K_p[m] + co.zeta_star * model.M).tocsr(), pm, pm))
        bm.set(pm, po, R((-co.zeta_star * model.M).tocsr(), pm, po))
        bm.set(tm, tm, R((model.K_t[m] + co.omega_star * model.M).tocsr(), tm, tm))
        bm.set(tm, to, R((-co.omega_star * model.M).tocsr(), tm, to))
    solver = fc.MonolithicSolver(bm, tol=model.opts.tol_step,
                                 dense_limit=model.opts.dense_limit,
                                 direct_limit=model.opts.direct_limit)
    b = np.concatenate([
        model.load_u[fr["u"]],
        model.load_p[1][fr["p1"]], model.load_p[2][fr["p2"]],
        model.load_th[1][fr["th1"]], model.load_th[2][fr["th2"]]])
    # field order in bm is (u, p1, p2, th1, th2) = ALL_FIELDS
    x = solver.solve(b)
    parts = bm.unpack(x)
    st = model.zero_state()
    st.t = np.inf
    st.u[fr["u"]] = parts["u"]
    for m in (1, 2):
        st.p[m][fr[f"p{m}"]] = parts[f"p{m}"]
        st.th[m][fr[f"th{m}"]] = parts[f"th{m}"]
    return st


def state_distance(model: MacroModel, a: MacroState, b: MacroState) -> dict:
    """Mass-weighted L2 distances per field."""
    out = {}
    du = (a.u - b.u).reshape(-1, 3)
    out["u"] = float(np.sqrt(sum(du[:, c] @ (model.M @ du[:, c])
                                 for c in range(3))))
    for m in (1, 2):
        dp = a.p[m] - b.p[m]
        dt_ = a.th[m] - b.th[m]
        out[f"p{m}"] = float(np.sqrt(dp @ (model.M @ dp)))
        out[f"th{m}"] = float(np.sqrt(dt_ @ (model.M @ dt_)))
    return out


# ---------------------------------------------------------------------------
# manufactured solutions


def l2_error(grid, nodal: np.ndarray, exact_fn) -> float:
    """Quadrature L2 distance between a nodal field and a callable."""
    tab = fc.tables(grid.h)
    nodal = np.asarray(nodal, float)
    if nodal.ndim == 1:
        nodal = nodal[:, None]
    corners = fc._elem_corners(grid)
    total = 0.0
    for s in range(0, grid.n_elems, fc._CHUNK):
        e = min(s + fc._CHUNK, grid.n_elems)
        pts = (corners[s:e, None, :] + tab.qloc[None, :, :] * grid.h)
        vals_e = np.asarray(exact_fn(pts.reshape(-1, 3)), float)
        if vals_e.ndim == 1:
            vals_e = vals_e[:, None]
        vals_e = vals_e.reshape(e - s, 8, -1)
        nd = nodal[grid.elems[s:e]]                       # (m, 8, c)
        vals_h = np.einsum("qa,mac->mqc", tab.SH, nd)
        d = vals_h - vals_e
        total += float(np.einsum("q,mqc,mqc->", tab.wq, d, d))
    return np.sqrt(total)


def synthetic_coefficients() -> EffectiveCoefficients:
    """Hand-built coefficient set exercising every coupling, with diagonal
    transport tensors so cosine-product fields satisfy the natural boundary
    conditions of the unconstrained component."""
    from .effective_coefficients import ID_SYM6
    from .params import isotropic_voigt

    A = isotropic_voigt(2.0, 1.0)
    return EffectiveCoefficients(
        A_hom=A, A_hom_direct=A.copy(),
        B={1: np.diag([0.5, 0.4, 0.3]), 2: np.diag([0.2, 0.15, 0.1])},
        D={1: np.diag([0.3, 0.25, 0.2]), 2: np.diag([0.12, 0.1, 0.08])},
        C={1: 0.55 * ID_SYM6, 2: 0.45 * ID_SYM6},
        K={1: np.diag([1.0, 0.9, 0.8]), 2: np.diag([0.3, 0.25, 0.2])},
        L={1: np.diag([0.8, 0.7, 0.6]), 2: np.diag([0.25, 0.2, 0.15])},
        beta={1: 0.8, 2: 0.6}, gamma={1: 0.5, 2: 0.4},
        phi_star={1: 0.6, 2: 0.4}, alpha_star={1: 0.1, 2: 0.08},
        c_star={1: 0.7, 2: 0.5},
        zeta_star=0.5, omega_star=0.4,
        volumes={1: 0.6, 2: 0.4}, interface_area=1.0,
        resolution=0, cell_flux_reading="synthetic", geometry_name="synthetic")


def manufactured_case(time_power: int = 1):
    """Symbolically manufactured exact solution and source callables for the
    homogenized model with `synthetic_coefficients`.

    time_power 1 gives fields linear in t (the implicit Euler step is then
    time-exact and runs isolate the spatial error); 2 gives genuinely
    time-curved fields for temporal order checks.

    Returns (coeffs, exact, loads): exact[field](pts, t) -> values,
    loads[field](pts, t) -> strong-form source values.
    """
    import sympy as sym

    co = synthetic_coefficients()
    x, y, z, t = sym.symbols("x y z t", real=True)
    X = (x, y, z)
    pi = sym.pi
    tp = t if time_power == 1 else t**2

    sxyz = sym.sin(pi * x) * sym.sin(pi * y) * sym.sin(pi * z)
    u_sym = [0.3 * tp * sxyz, 0.2 * tp * sxyz, 0.1 * tp * sxyz]
    p_sym = {1: 0.7 * tp * sxyz,
             2: 0.6 * tp * sym.cos(pi * x) * sym.cos(pi * y) * sym.cos(pi * z)}
    th_sym = {1: 0.5 * tp * sym.sin(pi * x) * sym.sin(2 * pi * y) * sym.sin(pi * z),
              2: 0.4 * tp * sym.cos(pi * x) * sym.cos(2 * pi * y) * sym.cos(pi * z)}

    def strain(u):
        return [[(sym.diff(u[i], X[j]) + sym.diff(u[j], X[i])) / 2
                 for j in range(3)] for i in range(3)]

    e_u = strain(u_sym)
    e_v = [e_u[r][s] for (r, s) in fc.VOIGT]
    W = fc.VOIGT_WEIGHTS
    sigma_v = [sum(co.A_hom[a, b] * W[b] * e_v[b] for b in range(6))
               for a in range(6)]
    sigma = [[None] * 3 for _ in range(3)]
    for slot, (r, s) in enumerate(fc.VOIGT):
        sigma[r][s] = sigma_v[slot]
        sigma[s][r] = sigma_v[slot]
    for m in (1, 2):
        for i in range(3):
            for j in range(3):
                sigma[i][j] = sigma[i][j] - co.B[m][i, j] * p_sym[m] \
                    - co.D[m][i, j] * th_sym[m]
    f_sym = [-sum(sym.diff(sigma[i][j], X[j]) for j in range(3))
             for i in range(3)]

    from .effective_coefficients import voigt_to_tensor
    g_sym, h_sym = {}, {}
    for m in (1, 2):
        T = voigt_to_tensor(co.storage_trace(m))
        tr_e = sum(T[i][j] * e_u[i][j] for i in range(3) for j in range(3))
        other = 3 - m
        stor_p = co.phi_star[m] * p_sym[m] + co.alpha_star[m] * th_sym[m] \
            + co.beta[m] * tr_e
        g_sym[m] = sym.diff(stor_p, t) \
            - sum(sym.diff(sum(co.K[m][i, j] * sym.diff(p_sym[m], X[j])
                               for j in range(3)), X[i]) for i in range(3)) \
            + co.zeta_star * (p_sym[m] - p_sym[other])
        stor_t = co.c_star[m] * th_sym[m] + co.alpha_star[m] * p_sym[m] \
            + co.gamma[m] * tr_e
        h_sym[m] = sym.diff(stor_t, t) \
            - sum(sym.diff(sum(co.L[m][i, j] * sym.diff(th_sym[m], X[j])
                               for j in range(3)), X[i]) for i in range(3)) \
            + co.omega_star * (th_sym[m] - th_sym[other])

    def lamb(expr):
        fn = sym.lambdify((x, y, z, t), expr, modules="numpy")

        def call(pts, tv):
            pts = np.asarray(pts, float)
            out = fn(pts[:, 0], pts[:, 1], pts[:, 2], tv)
            return np.broadcast_to(out, (pts.shape[0],)).astype(float)

        return call

    exact = {"u": [lamb(c) for c in u_sym]}
    loads = {"u": [lamb(c) for c in f_sym]}
    for m in (1, 2):
        exact[f"p{m}"] = lamb(p_sym[m])
        exact[f"th{m}"] = lamb(th_sym[m])
        loads[f"p{m}"] = lamb(g_sym[m])
        loads[f"th{m}"] = lamb(h_sym[m])
    return co, exact, loads


def _mms_source_fn(model: MacroModel, loads):
    grid = model.grid

    def source(t_new: float) -> dict:
        out = {"u": fc.vector_load(
            grid, None, fn=lambda pts: np.stack(
                [loads["u"][c](pts, t_new) for c in range(3)], axis=1))}
        for f_name in ("p1", "p2", "th1", "th2"):
            out[f_name] = fc.scalar_load(
                grid, None, fn=lambda pts, f=f_name: loads[f](pts, t_new))
        return out

    return source


def mms_spatial_study(resolutions=(4, 8, 16), dt: float = 0.05,
                      n_steps: int = 2, options: SolverOptions = None) -> dict:
    """Final-time L2 errors against a manufactured solution linear in time,
    per field and resolution, plus fitted convergence orders."""
    co, exact, loads = manufactured_case(time_power=1)
    opts = options or SolverOptions()
    zero_src = SourceSpec()
    errs = {f: [] for f in ("u", "p1", "p2", "th1", "th2")}
    T = dt * n_steps
    for n in resolutions:
        model = MacroModel(co, zero_src, n, dt, options=opts)
        st, _ = model.run(model.zero_state(), n_steps,
                          source_fn=_mms_source_fn(model, loads))
        errs["u"].append(l2_error(
            model.grid, st.u.reshape(-1, 3),
            lambda pts: np.stack([exact["u"][c](pts, T) for c in range(3)],
                                 axis=1)))
        for f_name in ("p1", "p2", "th1", "th2"):
            m = int(f_name[-1])
            nodal = st.p[m] if f_name.startswith("p") else st.th[m]
            errs[f_name].append(l2_error(
                model.grid, nodal, lambda pts, f=f_name: exact[f](pts, T)))
    orders = {f: [float(np.log2(errs[f][i] / errs[f][i + 1]))
                  for i in range(len(resolutions) - 1)] for f in errs}
    return {"resolutions": list(resolutions), "errors": errs, "orders": orders}


def mms_temporal_study(resolution: int = 8, dts=(0.05, 0.025),
                       ref_refinement: int = 16, t_end: float = 0.2,
                       options: SolverOptions = None) -> dict:
    """Backward-Euler time-order check: errors at t_end against a same-mesh
    reference computed with dt/ref_refinement, for a solution quadratic in
    time."""
    co, exact, loads = manufactured_case(time_power=2)
    opts = options or SolverOptions()
    zero_src = SourceSpec()

    def run_with(dt):
        n = int(round(t_end / dt))
        if abs(n * dt - t_end) > 1e-12:
            raise ConsistencyError(f"dt {dt} does not divide t_end {t_end}")
        model = MacroModel(co, zero_src, resolution, dt, options=opts)
        st, _ = model.run(model.zero_state(), n,
                          source_fn=_mms_source_fn(model, loads))
        return model, st

    ref_model, ref_state = run_with(min(dts) / ref_refinement)
    errs = []
    for dt in dts:
        _, st = run_with(dt)
        errs.append(sum(state_distance(ref_model, st, ref_state).values()))
    orders = [float(np.log2(errs[i] / errs[i + 1]))
              for i in range(len(dts) - 1)]
    return {"dts": list(dts), "errors": errs, "orders": orders}
