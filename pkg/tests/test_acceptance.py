"""Acceptance suite: one test per advertised guarantee, with pinned
tolerances and runtime budgets. Each test prints a single PASS line with the
measured numbers when it succeeds."""

import dataclasses
import filecmp
import json
import time

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from thermoporo import fem_core as fc
from thermoporo.cli_io import main as cli_main
from thermoporo.effective_coefficients import ID_SYM6, upscale
from thermoporo.macro_solver import MacroModel
from thermoporo.micro_dns import MicroModel
from thermoporo.params import (PhaseParams, Profile, SourceSpec,
                               TwoPhaseMaterial)
from thermoporo.unit_cell import MicroMesh, build_unit_cell
from thermoporo.verification import (convergence_study, mms_spatial_study,
                                     mms_temporal_study)

from conftest import contrast2_phases

BOX8 = {"kind": "box", "lo": [0.25, 0.25, 0.25], "hi": [0.75, 0.75, 0.75],
        "resolution": 8}


@pytest.fixture(scope="module")
def box8_upscaled(material):
    cell = build_unit_cell(BOX8)
    return upscale(cell, material), cell


@pytest.fixture(scope="module")
def lam16_upscaled(material):
    cell = build_unit_cell({"kind": "laminate", "axis": 0, "thickness": 0.5,
                            "resolution": 16})
    return upscale(cell, material), cell


def test_criterion_01_homogeneous_medium_identity():
    # equal elastic and transport moduli across the phases: correctors
    # vanish, the cell average returns the phase tensors exactly
    p1, p2 = contrast2_phases()
    p2h = PhaseParams(lam=p1.lam, mu=p1.mu, beta=p2.beta, gamma=p2.gamma,
                      alpha=p2.alpha, phi=p2.phi, kappa=p1.kappa,
                      lam_hat=p1.lam_hat, c=p2.c)
    mat = TwoPhaseMaterial(p1, p2h, Profile("constant", value=1.0),
                           Profile("constant", value=1.0))
    t0 = time.monotonic()
    coeffs, correctors = upscale(build_unit_cell(BOX8), mat)
    elapsed = time.monotonic() - t0
    A1 = p1.voigt()
    scale = np.abs(A1).max()
    w_max = float(np.abs(correctors.w).max())
    a_err = float(np.abs(coeffs.A_hom - A1).max() / scale)
    c_err = max(float(np.abs(coeffs.C[m] - coeffs.volumes[m] * ID_SYM6).max())
                for m in (1, 2))
    assert w_max <= 1e-8
    assert a_err <= 1e-8
    assert c_err <= 1e-8
    assert elapsed < 10.0
    print(f"criterion 1 PASS: homogeneous identity |w|={w_max:.1e}, "
          f"A rel err {a_err:.1e}, C err {c_err:.1e}, {elapsed:.1f}s")


def test_criterion_02_interior_inclusion_degeneracy(box8_upscaled, material):
    (co, _), cell = box8_upscaled
    vanish = max(float(np.abs(T).max())
                 for T in (co.K[2], co.L[2], co.B[2], co.D[2]))
    assert vanish <= 1e-8
    K1 = co.K[1]
    assert np.abs(K1 - K1.T).max() <= 1e-12
    ev = np.linalg.eigvalsh(K1)
    cap = material.phase1.kappa * co.volumes[1]
    assert ev.min() > 0.0
    assert ev.max() < cap
    print(f"criterion 2 PASS: inclusion tensors vanish to {vanish:.1e}; "
          f"matrix mobility eigenvalues in ({ev.min():.3f}, {ev.max():.3f}) "
          f"strictly inside (0, {cap:.3f})")


def test_criterion_03_cross_tensor_identities(box_upscaled, box8_upscaled,
                                              laminate_upscaled,
                                              lam16_upscaled, material):
    geoms = {"box4": box_upscaled, "box8": box8_upscaled[0],
             "laminate8": laminate_upscaled, "laminate16": lam16_upscaled[0]}
    worst = 0.0
    for name, (co, _) in geoms.items():
        for m in (1, 2):
            ph = material.phase(m)
            sk = max(np.abs(ph.beta * co.K[m]).max(), 1e-30)
            err = np.abs(ph.beta * co.K[m] - ph.kappa * co.B[m].T).max() / sk
            assert err <= 1e-8, (name, m, "pressure cross identity")
            sl = max(np.abs(ph.gamma * co.L[m]).max(), 1e-30)
            err_l = np.abs(ph.gamma * co.L[m]
                           - ph.lam_hat * co.D[m].T).max() / sl
            assert err_l <= 1e-8, (name, m, "temperature cross identity")
            worst = max(worst, err, err_l)
        c_err = np.abs(co.C[1] + co.C[2] - ID_SYM6).max()
        assert c_err <= 1e-8, name
        a_err = np.abs(co.A_hom - co.A_hom_direct).max() / np.abs(co.A_hom).max()
        assert a_err <= 1e-8, name
        worst = max(worst, float(c_err), float(a_err))
    print(f"criterion 3 PASS: cross identities hold on {len(geoms)} "
          f"geometries, worst relative defect {worst:.1e}")


def test_criterion_04_laminate_closed_forms(lam16_upscaled, material):
    (co, _), cell = lam16_upscaled
    kap = material.phase1.kappa
    vol1 = co.volumes[1]
    k_block = abs(co.K[1][0, 0])
    k_open = abs(co.K[1][1, 1] - kap * vol1)
    assert k_block <= 1e-6
    assert k_open <= 1e-6 * kap * vol1
    # layered-medium closed form for equal halves of (lam, mu) = (1,1), (2,2)
    backus = np.array([
        [4.0, 4 / 3, 4 / 3, 0.0, 0.0, 0.0],
        [4 / 3, 40 / 9, 13 / 9, 0.0, 0.0, 0.0],
        [4 / 3, 13 / 9, 40 / 9, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.5, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 4 / 3, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 4 / 3]])
    a_err = float(np.abs(co.A_hom - backus).max() / np.abs(backus).max())
    assert a_err <= 0.01
    print(f"criterion 4 PASS: laminate mobility blocked to {k_block:.1e}, "
          f"open to {k_open:.1e}; layered-medium oracle off by {a_err:.1e} "
          "(tolerance 1e-2)")


def _march_two_field_exchange(grid, stor, Ktens, exch, loads, init,
                              dt, n_steps):
    """Reference backward-Euler solve for a pair of exchange-coupled scalar
    fields; field 1 has homogeneous Dirichlet data, field 2 is free."""
    M = fc.assemble_scalar_mass(grid)
    K1 = fc.assemble_scalar_stiffness(grid, None, matrix_coeff=Ktens[1])
    K2 = fc.assemble_scalar_stiffness(grid, None, matrix_coeff=Ktens[2])
    nn = grid.n_nodes
    free1 = np.setdiff1d(np.arange(nn), grid.boundary_nodes)
    all2 = np.arange(nn)

    def R(A, rows, cols):
        return A[rows][:, cols]

    S = sp.bmat([
        [R(stor[1] * M + dt * K1 + dt * exch * M, free1, free1),
         R(-dt * exch * M, free1, all2)],
        [R(-dt * exch * M, all2, free1),
         R(stor[2] * M + dt * K2 + dt * exch * M, all2, all2)]]).tocsc()
    lu = spla.splu(S)
    f1, f2 = init[1].copy(), init[2].copy()
    out = []
    for _ in range(n_steps):
        b = np.concatenate([(stor[1] * (M @ f1) + dt * loads[1])[free1],
                            stor[2] * (M @ f2) + dt * loads[2]])
        x = lu.solve(b)
        f1 = np.zeros(nn)
        f1[free1] = x[:free1.size]
        f2 = x[free1.size:]
        out.append((f1.copy(), f2.copy()))
    return out


def test_criterion_05_decoupling_limits(box_cell, sources):
    p1, p2 = contrast2_phases()
    dt, n_steps, res = 0.05, 4, 8

    def run_case(kill):
        reps = {k: 0.0 for k in kill}
        mat = TwoPhaseMaterial(dataclasses.replace(p1, **reps),
                               dataclasses.replace(p2, **reps),
                               Profile("constant", value=1.0),
                               Profile("constant", value=1.0))
        co, _ = upscale(box_cell, mat)
        model = MacroModel(co, sources, res, dt)
        return co, model

    worst = 0.0
    # temperatures decouple when gamma = alpha = 0
    co, model = run_case(("gamma", "alpha"))
    st0 = model.initial_state({"th1": {"kind": "bump", "amplitude": 0.4},
                               "th2": 0.3})
    _, _, states = model.run(st0, n_steps, keep_states=True)
    loads = {m: fc.scalar_load(model.grid, co.volumes[m]
                               * (sources.h1 if m == 1 else sources.h2))
             for m in (1, 2)}
    ref = _march_two_field_exchange(
        model.grid, co.c_star, co.L, co.omega_star, loads,
        {1: st0.th[1], 2: st0.th[2]}, dt, n_steps)
    for k, (r1, r2) in enumerate(ref, start=1):
        worst = max(worst, np.abs(states[k].th[1] - r1).max(),
                    np.abs(states[k].th[2] - r2).max())
    assert worst <= 1e-9

    # pressures decouple when beta = alpha = 0
    co, model = run_case(("beta", "alpha"))
    st0 = model.initial_state({"p1": {"kind": "bump", "amplitude": 0.4},
                               "p2": 0.3})
    _, _, states = model.run(st0, n_steps, keep_states=True)
    loads = {m: fc.scalar_load(model.grid, co.volumes[m]
                               * (sources.g1 if m == 1 else sources.g2))
             for m in (1, 2)}
    ref = _march_two_field_exchange(
        model.grid, co.phi_star, co.K, co.zeta_star, loads,
        {1: st0.p[1], 2: st0.p[2]}, dt, n_steps)
    worst_p = 0.0
    for k, (r1, r2) in enumerate(ref, start=1):
        worst_p = max(worst_p, np.abs(states[k].p[1] - r1).max(),
                      np.abs(states[k].p[2] - r2).max())
    assert worst_p <= 1e-9
    print(f"criterion 5 PASS: decoupled trajectories match standalone "
          f"exchange solves to {max(worst, worst_p):.1e} per node "
          "(tolerance 1e-9)")


def test_criterion_06_manufactured_solution_orders():
    t0 = time.monotonic()
    spatial = mms_spatial_study(resolutions=(4, 8, 16), dt=0.05, n_steps=2)
    temporal = mms_temporal_study(resolution=8,
                                  dts=(0.05, 0.025, 0.0125),
                                  ref_refinement=16, t_end=0.2)
    elapsed = time.monotonic() - t0
    s_min = min(min(v) for v in spatial["orders"].values())
    t_min = min(temporal["orders"])
    assert s_min >= 1.8, spatial["orders"]
    assert t_min >= 0.9, temporal["orders"]
    assert elapsed < 300.0
    print(f"criterion 6 PASS: spatial orders >= {s_min:.2f} over 4/8/16, "
          f"temporal orders >= {t_min:.2f} over dt halvings, {elapsed:.0f}s")


def test_criterion_07_energy_identities(box_upscaled, box_cell, sources):
    # pure diffusion: the discrete balance closes to rounding
    p1, p2 = contrast2_phases()
    kill = {"beta": 0.0, "gamma": 0.0, "alpha": 0.0}
    mat = TwoPhaseMaterial(dataclasses.replace(p1, **kill),
                           dataclasses.replace(p2, **kill),
                           Profile("constant", value=1.0),
                           Profile("constant", value=1.0))
    co_d, _ = upscale(box_cell, mat)
    model = MacroModel(co_d, sources, 6, 0.05)
    st0 = model.initial_state({"p1": {"kind": "bump", "amplitude": 0.3},
                               "th1": {"kind": "bump", "amplitude": 0.2}})
    _, rows = model.run(st0, 4)
    diff_res = max(abs(r.residual_exact) for r in rows)
    assert diff_res <= 1e-8

    # fully coupled: the continuum-form residual is first order in dt
    co, _ = box_upscaled
    res = []
    for dt, n in ((0.0125, 8), (0.00625, 16), (0.003125, 32)):
        m2 = MacroModel(co, sources, 6, dt)
        st0 = m2.initial_state({"p1": {"kind": "bump", "amplitude": 0.3},
                                "th1": {"kind": "bump", "amplitude": 0.2}})
        _, rows = m2.run(st0, n)
        res.append(abs(rows[-1].residual_continuum))
    assert res[0] > res[1] > res[2]
    ratios = [res[i] / res[i + 1] for i in range(2)]
    for r in ratios:
        assert 1.6 <= r <= 2.4, ratios
    print(f"criterion 7 PASS: pure-diffusion residual {diff_res:.1e} "
          f"(tolerance 1e-8); coupled continuum residual halves with dt, "
          f"ratios {ratios[0]:.2f}, {ratios[1]:.2f}")


def test_criterion_08_scale_convergence(box_cell, material, sources,
                                        box_upscaled):
    coeffs, correctors = box_upscaled
    eps_list = (0.5, 0.25, 0.125)
    t0 = time.monotonic()
    rep = convergence_study(box_cell, material, sources, eps_list=eps_list,
                            macro_resolution=16, dt=0.05, n_steps=2,
                            coeffs=coeffs, correctors=correctors)
    elapsed = time.monotonic() - t0
    finest_cells = box_cell.resolution * int(round(1 / min(eps_list)))
    assert finest_cells <= 48
    msg = []
    for f in ("u", "p1", "th1"):
        _, _, corr = rep.series(f)
        assert rep.monotone(f), (f, corr)
        msg.append(f"{f} " + "->".join(f"{v:.3f}" for v in corr))
    assert elapsed < 900.0
    print(f"criterion 8 PASS: corrected errors decrease monotonically over "
          f"eps {eps_list}: " + "; ".join(msg) + f"; {elapsed:.0f}s, finest "
          f"grid {finest_cells}^3")


def test_criterion_09_interface_scaling(box_cell):
    p1, p2 = contrast2_phases()
    mat = TwoPhaseMaterial(p1, p2,
                           Profile("affine", c0=1.0, grad=[0.0, 0.0, 1.0]),
                           Profile("constant", value=2.0))
    cell_integral = 2.25            # int over the cell interface of (1 + z)
    energies = []
    for eps in (1.0, 0.5, 0.25):
        mesh = MicroMesh(box_cell, eps)
        model = MicroModel(mesh, mat, SourceSpec(), 0.05)
        ones1 = np.ones(model.nred[1])
        energies.append(float(ones1 @ (model.Jp[0] @ ones1)))
        assert abs(energies[-1] - cell_integral) <= 1e-12
    spread = max(energies) - min(energies)
    assert spread <= 1e-12
    print(f"criterion 9 PASS: unit-jump interface energy "
          f"{energies[0]:.12f} at every eps (cell integral {cell_integral}), "
          f"spread {spread:.1e}")


def test_criterion_10_deterministic_reruns(tmp_path):
    p1, p2 = contrast2_phases()
    doc = {
        "geometry": {"kind": "box", "lo": [0.25, 0.25, 0.25],
                     "hi": [0.75, 0.75, 0.75], "resolution": 4},
        "phases": {"1": dataclasses.asdict(p1), "2": dataclasses.asdict(p2)},
        "interface": {"zeta": 1.0, "omega": 1.0},
        "sources": {"g1": 0.5, "g2": 0.3, "h1": 0.2, "h2": 0.1},
        "time": {"dt": 0.05, "t_end": 0.1},
        "macro": {"resolution": 4},
        "dns": {"eps_list": [0.5]},
        "output": {"vtk": True},
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(doc, indent=1))
    pipelines = {
        "upscale": ["upscale", "--config", str(cfg)],
        "macro": ["macro", "--config", str(cfg)],
        "dns": ["dns", "--config", str(cfg)],
        "verify": ["verify", "--config", str(cfg)],
    }
    checked = 0
    for name, argv in pipelines.items():
        dirs = []
        for tag in ("A", "B"):
            out = tmp_path / f"{name}{tag}"
            code = cli_main(["--sequential"] + argv + ["--out", str(out)])
            assert code in (0, 1), (name, code)
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names == sorted(p.name for p in dirs[1].iterdir())
        match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names,
                                                   shallow=False)
        assert mismatch == [] and errors == [], (name, mismatch, errors)
        checked += len(names)
    print(f"criterion 10 PASS: sequential reruns byte-identical across "
          f"{len(pipelines)} pipelines, {checked} files compared")
