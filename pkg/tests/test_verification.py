import numpy as np
import pytest

from thermoporo import fem_core as fc
from thermoporo.cell_problems import CellCorrectors
from thermoporo.macro_solver import MacroModel
from thermoporo.params import SourceSpec
from thermoporo.verification import (ConvergenceReport, ConvergenceRow,
                                     CorrectorSampler, convergence_study,
                                     energy_identity_residual, l2_error,
                                     manufactured_case, mms_spatial_study,
                                     mms_temporal_study,
                                     synthetic_coefficients)


def zero_correctors(cell, material):
    nn = cell.grid.n_nodes
    pi = {m: np.zeros((3, cell.phase_dof_map(m)[1])) for m in (1, 2)}
    th = {m: np.zeros((3, cell.phase_dof_map(m)[1])) for m in (1, 2)}
    return CellCorrectors(mesh=cell, material=material,
                          w=np.zeros((6, 3 * nn)), pi=pi, theta=th,
                          K_elastic=None,
                          prestress_loads=np.zeros((6, 3 * nn)))


def test_zero_correctors_make_corrected_equal_plain(box_cell, material, rng):
    sampler = CorrectorSampler(zero_correctors(box_cell, material),
                               fc.LatticeGrid(8), 0.25)
    model = MacroModel(synthetic_coefficients(), SourceSpec(g1=0.4), 8, 0.05)
    st, _ = model.run(model.initial_state(
        {"p1": {"kind": "bump", "amplitude": 0.3}}), 1)
    pts = rng.uniform(0.05, 0.95, size=(40, 3))
    assert np.allclose(sampler.displacement(st, pts, corrected=True),
                       sampler.displacement(st, pts, corrected=False))
    assert np.allclose(sampler.scalar("pi", 1, st.p[1], pts, corrected=True),
                       sampler.scalar("pi", 1, st.p[1], pts, corrected=False))


def test_sampler_adds_scaled_cell_corrector(box_upscaled, rng):
    # for a macro field with constant gradient, the corrected scalar equals
    # plain + eps * pi(x/eps) . grad
    _, cors = box_upscaled
    grid = fc.LatticeGrid(8)
    eps = 0.5
    sampler = CorrectorSampler(cors, grid, eps)
    g = np.array([0.7, -0.3, 0.2])
    nodal = grid.node_coords @ g
    pts = rng.uniform(0.1, 0.9, size=(50, 3))
    corr = sampler.scalar("pi", 1, nodal, pts, corrected=True)
    plain = pts @ g
    y = np.mod(pts / eps, 1.0)
    table = np.stack([cors.scalar_full("pi", 1, i) for i in range(3)], axis=1)
    expect = plain + eps * (fc.eval_nodal(cors.mesh.grid, table, y) @ g)
    assert np.abs(corr - expect).max() <= 1e-12


def test_l2_error_exact_for_trilinear_fields():
    grid = fc.LatticeGrid(4)

    def affine(pts):
        return 0.3 + pts @ np.array([1.0, -2.0, 0.5])

    nodal = affine(grid.node_coords)
    assert l2_error(grid, nodal, affine) <= 1e-14
    # constant offset: error equals |offset| over the unit box
    off = l2_error(grid, nodal, lambda pts: affine(pts) + 0.25)
    assert abs(off - 0.25) <= 1e-12
    vec = np.stack([nodal, 2 * nodal], axis=1)
    assert l2_error(grid, vec,
                    lambda pts: np.stack([affine(pts), 2 * affine(pts)],
                                         axis=1)) <= 1e-13


def test_convergence_report_bookkeeping(tmp_path):
    rows = [ConvergenceRow("p1", 0.5, 0.1, 0.05),
            ConvergenceRow("p1", 0.25, 0.08, 0.02),
            ConvergenceRow("p1", 0.125, 0.07, 0.03),
            ConvergenceRow("u", 0.25, 0.2, 0.1),
            ConvergenceRow("u", 0.5, 0.3, 0.2)]
    rep = ConvergenceReport(rows=rows, dt=0.05, n_steps=2,
                            macro_resolution=8, cell_resolution=4)
    eps, plain, corr = rep.series("p1")
    assert eps == [0.5, 0.25, 0.125]
    assert rep.monotone("p1", which="plain")
    assert not rep.monotone("p1")
    assert rep.monotone("u")
    assert rep.corrected_improves("u")
    jp = tmp_path / "rep.json"
    rep.save_json(jp)
    import json
    back = json.loads(jp.read_text())
    assert back["format"] == "scale-convergence-report"
    assert len(back["rows"]) == 5
    cp = tmp_path / "rep.csv"
    rep.save_csv(cp)
    import csv
    with open(cp) as f:
        rows_csv = list(csv.DictReader(f))
    assert [r["field"] for r in rows_csv] == ["p1", "p1", "p1", "u", "u"]
    assert float(rows_csv[0]["eps"]) == 0.5


def test_synthetic_coefficients_well_posed():
    co = synthetic_coefficients()
    for m in (1, 2):
        assert co.phi_star[m] * co.c_star[m] > co.alpha_star[m] ** 2
        assert np.linalg.eigvalsh(co.K[m]).min() > 0
    W = np.sqrt(fc.VOIGT_WEIGHTS)
    assert np.linalg.eigvalsh(np.diag(W) @ co.A_hom @ np.diag(W)).min() > 0


def test_manufactured_fields_compatible_with_run_setup():
    co, exact, loads = manufactured_case(time_power=1)
    # zero initial data
    pts = np.array([[0.3, 0.4, 0.5], [0.7, 0.2, 0.9]])
    for c in range(3):
        assert np.abs(exact["u"][c](pts, 0.0)).max() == 0.0
    assert np.abs(exact["p1"](pts, 0.0)).max() == 0.0
    # Dirichlet fields vanish on the boundary at all times
    bpts = np.array([[0.0, 0.3, 0.4], [1.0, 0.5, 0.5], [0.2, 0.0, 0.8],
                     [0.2, 1.0, 0.8], [0.6, 0.7, 0.0], [0.6, 0.7, 1.0]])
    for c in range(3):
        assert np.abs(exact["u"][c](bpts, 0.7)).max() <= 1e-14
    assert np.abs(exact["p1"](bpts, 0.7)).max() <= 1e-14
    assert np.abs(exact["th1"](bpts, 0.7)).max() <= 1e-14
    # sources are finite and nonzero somewhere
    assert np.isfinite(loads["p2"](pts, 0.3)).all()
    assert np.abs(loads["u"][0](pts, 0.3)).max() > 0


def test_mms_spatial_smoke():
    out = mms_spatial_study(resolutions=(4, 8), dt=0.05, n_steps=1)
    assert set(out["errors"]) == {"u", "p1", "p2", "th1", "th2"}
    for f, orders in out["orders"].items():
        assert len(orders) == 1
        assert orders[0] > 1.5, f


def test_mms_temporal_smoke():
    out = mms_temporal_study(resolution=4, dts=(0.1, 0.05),
                             ref_refinement=8, t_end=0.2)
    assert 0.8 <= out["orders"][0] <= 1.3


def test_energy_identity_residual_reads_last_row():
    model = MacroModel(synthetic_coefficients(), SourceSpec(g1=0.4), 4, 0.05)
    _, rows = model.run(model.zero_state(), 3)
    out = energy_identity_residual(rows)
    assert out["exact"] == abs(rows[-1].residual_exact)
    assert out["continuum"] == abs(rows[-1].residual_continuum)
    assert out["exact"] <= 1e-12


def test_convergence_study_single_eps_smoke(box_cell, material, sources,
                                            box_upscaled):
    coeffs, correctors = box_upscaled
    rep = convergence_study(box_cell, material, sources, eps_list=[0.5],
                            macro_resolution=4, dt=0.05, n_steps=1,
                            coeffs=coeffs, correctors=correctors)
    assert len(rep.rows) == 5
    for row in rep.rows:
        assert row.eps == 0.5
        assert np.isfinite(row.plain) and np.isfinite(row.corrected)
        assert row.plain > 0 and row.corrected > 0
    assert rep.macro_resolution == 4 and rep.cell_resolution == 4
