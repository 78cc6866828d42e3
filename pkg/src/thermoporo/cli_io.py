"""Command-line interface and file output (JSON, CSV, legacy VTK).

Subcommands: upscale (cell problems -> coefficient files), macro
(homogenized run), dns (resolved micro run at one or more eps), verify
(scale-convergence study plus energy-balance residuals) and selftest
(quick analytic oracles).

Heavy imports happen inside main() so that --threads/--sequential can pin
the BLAS thread environment before numpy is first loaded. Exit codes:
0 success, 1 runtime/solver failure, 2 configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


def _pin_threads(n: int) -> None:
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


# ---------------------------------------------------------------------------
# VTK (legacy ASCII, structured points)


def write_vtk(path, grid, point_scalars=None, point_vectors=None,
              cell_scalars=None, title="thermoporo fields"):
    """Write nodal/cell fields on a LatticeGrid as legacy ASCII VTK.

    Arrays are reordered to the VTK convention (x fastest). Fixed %.9e
    formatting keeps reruns byte-identical.
    """
    import numpy as np

    S = grid.S
    N = grid.N

    def pt_order(a):
        return np.asarray(a).reshape(S, S, S, -1).transpose(2, 1, 0, 3) \
            .reshape(S**3, -1)

    def cell_order(a):
        return np.asarray(a).reshape(N, N, N).transpose(2, 1, 0).ravel()

    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {S} {S} {S}",
             "ORIGIN 0.0 0.0 0.0",
             f"SPACING {grid.h!r} {grid.h!r} {grid.h!r}",
             f"POINT_DATA {S**3}"]
    for name, arr in (point_scalars or {}).items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        vals = pt_order(arr)[:, 0]
        lines.extend(f"{v:.9e}" for v in vals)
    for name, arr in (point_vectors or {}).items():
        lines.append(f"VECTORS {name} double")
        vecs = pt_order(arr)
        lines.extend(f"{v[0]:.9e} {v[1]:.9e} {v[2]:.9e}" for v in vecs)
    if cell_scalars:
        lines.append(f"CELL_DATA {N**3}")
        for name, arr in cell_scalars.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{float(v):.9e}" for v in cell_order(arr))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_macro_vtk(path, model, st):
    write_vtk(path, model.grid,
              point_scalars={"p1": st.p[1], "p2": st.p[2],
                             "th1": st.th[1], "th2": st.th[2]},
              point_vectors={"u": st.u.reshape(-1, 3)})


def _write_micro_vtk(path, model, st):
    import numpy as np

    grid = model.mesh.grid
    scal = {}
    for m in model.phases:
        for nm, red in ((f"p{m}", st.p[m]), (f"th{m}", st.th[m])):
            full = np.zeros(grid.n_nodes)
            if model.contact == "barrier":
                full[model.mesh.phase_nodes(m)] = red
            else:
                full[:] = red
            scal[nm] = full
    write_vtk(path, grid, point_scalars=scal,
              point_vectors={"u": st.u.reshape(-1, 3)},
              cell_scalars={"phase": model.mesh.labels.astype(float)})


def _write_ledger_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "t", "storage", "elastic", "p1_terminal",
                    "p2_dissipation", "p3_coupling", "p5_diffusion",
                    "p6_exchange", "p7_source", "residual_exact",
                    "residual_continuum"])
        for r in rows:
            w.writerow([r.step, repr(r.t)] + [f"{v:.16e}" for v in (
                r.storage, r.elastic, r.p1_terminal, r.p2_dissipation,
                r.p3_coupling, r.p5_diffusion, r.p6_exchange, r.p7_source,
                r.residual_exact, r.residual_continuum)])


def _dump_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def _load_cfg(args):
    from .params import RunConfig

    return RunConfig.from_json_file(args.config)


def _build_cell(cfg):
    from .unit_cell import build_unit_cell

    return build_unit_cell(cfg.geometry, resolution=cfg.cell_resolution)


def _n_steps(cfg):
    from .errors import ConfigError

    n = int(round(cfg.t_end / cfg.dt))
    if abs(n * cfg.dt - cfg.t_end) > 1e-9 * max(1.0, cfg.t_end):
        raise ConfigError(f"t_end {cfg.t_end} is not a multiple of dt {cfg.dt}")
    return n


def cmd_upscale(args) -> int:
    from .effective_coefficients import upscale

    cfg = _load_cfg(args)
    cell = _build_cell(cfg)
    coeffs, correctors = upscale(cell, cfg.material, cfg.solver)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coeffs.save_json(out / "coefficients.json")
    coeffs.save_csv(out / "coefficients.csv")
    _dump_json(out / "cell_summary.json", {
        "resolution": cell.resolution,
        "volume_Y1": cell.volume(1),
        "volume_Y2": cell.volume(2),
        "interface_area": cell.interface.area,
        "phase2_strictly_interior": cell.phase2_strictly_interior,
        "flux_reading": correctors.flux_reading,
        "solves": [{"problem": lg.problem, "unknowns": lg.unknowns,
                    "iterations": lg.iterations, "residual": lg.residual}
                   for lg in correctors.logs],
    })
    print(f"wrote {out/'coefficients.json'}")
    return 0


def cmd_macro(args) -> int:
    from .effective_coefficients import EffectiveCoefficients, upscale
    from .macro_solver import MacroModel

    cfg = _load_cfg(args)
    if args.coefficients:
        coeffs = EffectiveCoefficients.load_json(args.coefficients)
    else:
        coeffs, _ = upscale(_build_cell(cfg), cfg.material, cfg.solver)
    model = MacroModel(coeffs, cfg.sources, cfg.macro_resolution, cfg.dt,
                       options=cfg.solver)
    st = model.initial_state(cfg.initial)
    n = _n_steps(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    want_vtk = cfg.output.get("vtk", True)
    every = int(cfg.output.get("vtk_every", 1))
    if want_vtk:
        _write_macro_vtk(out / "state_0000.vtk", model, st)
    final, rows, states = model.run(st, n, keep_states=True)
    if want_vtk:
        for k in range(1, n + 1):
            if k % every == 0 or k == n:
                _write_macro_vtk(out / f"state_{k:04d}.vtk", model, states[k])
    _write_ledger_csv(out / "ledger.csv", rows)
    last = rows[-1]
    _dump_json(out / "summary.json", {
        "steps": n, "t_end": final.t,
        "storage_energy": last.storage, "elastic_energy": last.elastic,
        "residual_exact": last.residual_exact,
        "residual_continuum": last.residual_continuum,
    })
    print(f"macro run: {n} steps, energy residual {last.residual_exact:.3e}")
    return 0


def cmd_dns(args) -> int:
    from .micro_dns import MicroModel
    from .unit_cell import MicroMesh

    cfg = _load_cfg(args)
    if args.override_desk_cap:
        cfg.solver.override_desk_cap = True
    cell = _build_cell(cfg)
    eps_values = [args.eps] if args.eps else list(cfg.eps_list)
    n = _n_steps(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for eps in eps_values:
        mesh = MicroMesh(cell, eps)
        model = MicroModel(mesh, cfg.material, cfg.sources, cfg.dt,
                           contact=args.contact, options=cfg.solver)
        st = model.initial_state(cfg.initial)
        final, _ = model.run(st, n, keep_states=False)
        tag = f"eps_{eps:g}".replace(".", "p")
        if cfg.output.get("vtk", True):
            _write_micro_vtk(out / f"dns_{tag}.vtk", model, final)
        summary[repr(float(eps))] = {
            "unknowns": model.n_unknowns,
            "interface_area": mesh.interface_area,
            "final_norms": model.norms(final),
        }
        print(f"dns eps={eps:g}: {model.n_unknowns} unknowns done")
    _dump_json(out / "dns_summary.json",
               {"contact": args.contact, "steps": n, "runs": summary})
    return 0


def cmd_verify(args) -> int:
    from .effective_coefficients import upscale
    from .macro_solver import MacroModel
    from .verification import convergence_study, energy_identity_residual

    cfg = _load_cfg(args)
    cell = _build_cell(cfg)
    n = _n_steps(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    coeffs, correctors = upscale(cell, cfg.material, cfg.solver)
    report = convergence_study(
        cell, cfg.material, cfg.sources, eps_list=cfg.eps_list,
        macro_resolution=cfg.macro_resolution, dt=cfg.dt, n_steps=n,
        initial=cfg.initial, options=cfg.solver, coeffs=coeffs,
        correctors=correctors)
    report.save_json(out / "convergence_report.json")
    report.save_csv(out / "convergence_report.csv")

    model = MacroModel(coeffs, cfg.sources, cfg.macro_resolution, cfg.dt,
                       options=cfg.solver)
    _, rows = model.run(model.initial_state(cfg.initial), n)
    res = energy_identity_residual(rows)
    _dump_json(out / "energy_residuals.json", res)

    # the corrector estimate covers the constrained fields; the natural-BC
    # pair is reported but does not gate the exit code
    gated = ("u", "p1", "th1")
    ok = True
    for f_name in ("u", "p1", "p2", "th1", "th2"):
        mono = report.monotone(f_name)
        imp = report.corrected_improves(f_name)
        if f_name in gated:
            ok = ok and mono and imp
        print(f"{f_name}: corrected errors "
              f"{'decrease monotonically' if mono else 'NOT monotone'}, "
              f"{'below' if imp else 'NOT below'} plain at finest eps"
              f"{'' if f_name in gated else ' (informational)'}")
    print(f"energy residual exact {res['exact']:.3e}, "
          f"continuum {res['continuum']:.3e}")
    return 0 if ok else 1


def _selftest_material():
    from .params import PhaseParams, Profile, TwoPhaseMaterial

    p1 = PhaseParams(lam=1.0, mu=1.0, beta=0.9, gamma=0.7, alpha=0.2,
                     phi=0.8, kappa=1.0, lam_hat=0.6, c=1.0)
    p2 = PhaseParams(lam=2.0, mu=2.0, beta=0.6, gamma=0.5, alpha=0.1,
                     phi=0.5, kappa=2.0, lam_hat=1.2, c=0.8)
    return TwoPhaseMaterial(p1, p2, Profile("constant", value=1.0),
                            Profile("constant", value=1.0))


def cmd_selftest(args) -> int:
    import numpy as np

    from .effective_coefficients import upscale
    from .params import Profile, TwoPhaseMaterial
    from .unit_cell import MicroMesh, build_unit_cell

    checks = []

    def check(name, ok):
        checks.append(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}")

    mat = _selftest_material()
    box = build_unit_cell({"kind": "box", "lo": [0.25, 0.25, 0.25],
                           "hi": [0.75, 0.75, 0.75], "resolution": 4})
    check("box interface area 6*(1/2)^2", abs(box.interface.area - 1.5) < 1e-12)
    check("box volumes 7/8, 1/8",
          abs(box.volume(1) - 0.875) < 1e-12 and abs(box.volume(2) - 0.125) < 1e-12)
    micro = MicroMesh(box, 0.5)
    check("tiling interface area scales as 1/eps",
          abs(micro.interface_area - 1.5 / 0.5) < 1e-12)

    homo = TwoPhaseMaterial(mat.phase1, mat.phase1,
                            Profile("constant", value=2.0),
                            Profile("constant", value=3.0))
    coeffs, correctors = upscale(box, homo)
    check("homogeneous medium: correctors vanish",
          float(np.abs(correctors.w).max()) < 1e-9)
    check("homogeneous medium: elasticity tensor reproduced",
          float(np.abs(coeffs.A_hom - homo.phase1.voigt()).max()) < 1e-8)
    check("constant-barrier exchange = barrier * area",
          abs(coeffs.zeta_star - 2.0 * box.interface.area) < 1e-12
          and abs(coeffs.omega_star - 3.0 * box.interface.area) < 1e-12)

    lam_cell = build_unit_cell({"kind": "laminate", "axis": 0,
                                "thickness": 0.5, "resolution": 4})
    co2, _ = upscale(lam_cell, mat)
    K1 = co2.K[1]
    kappa1 = mat.phase1.kappa
    expect = np.diag([0.0, kappa1 * 0.5, kappa1 * 0.5])
    check("laminate mobility blocked across, open along layers",
          float(np.abs(K1 - expect).max()) < 1e-9)
    check("interior inclusion mobility vanishes",
          float(np.abs(coeffs.K[2]).max()) < 1e-9)

    ok = all(checks)
    print(f"selftest: {sum(checks)}/{len(checks)} checks passed")
    return 0 if ok else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="thermoporo",
        description="Upscaling and direct simulation of two-component "
                    "thermo-poro-elastic media with imperfect interface contact")
    ap.add_argument("--threads", type=int, default=None,
                    help="pin BLAS/OpenMP threads (set before numpy loads)")
    ap.add_argument("--sequential", action="store_true",
                    help="single-threaded numerics (same as --threads 1)")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_up = sub.add_parser("upscale", help="solve cell problems, write coefficients")
    p_up.add_argument("--config", required=True)
    p_up.add_argument("--out", default="out-upscale")

    p_ma = sub.add_parser("macro", help="run the homogenized model")
    p_ma.add_argument("--config", required=True)
    p_ma.add_argument("--out", default="out-macro")
    p_ma.add_argument("--coefficients", default=None,
                      help="reuse a coefficients.json instead of upscaling")

    p_dn = sub.add_parser("dns", help="run the resolved micro model")
    p_dn.add_argument("--config", required=True)
    p_dn.add_argument("--out", default="out-dns")
    p_dn.add_argument("--eps", type=float, default=None,
                      help="single eps (default: config dns.eps_list)")
    p_dn.add_argument("--contact", choices=("barrier", "perfect"),
                      default="barrier")
    p_dn.add_argument("--override-desk-cap", action="store_true")

    p_ve = sub.add_parser("verify", help="scale-convergence and energy checks")
    p_ve.add_argument("--config", required=True)
    p_ve.add_argument("--out", default="out-verify")

    sub.add_parser("selftest", help="quick analytic oracle checks")

    args = ap.parse_args(argv)
    if args.sequential:
        _pin_threads(1)
    elif args.threads is not None:
        _pin_threads(args.threads)

    from .errors import ConfigError, ThermoporoError

    handlers = {"upscale": cmd_upscale, "macro": cmd_macro, "dns": cmd_dns,
                "verify": cmd_verify, "selftest": cmd_selftest}
    try:
        return handlers[args.cmd](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ThermoporoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
