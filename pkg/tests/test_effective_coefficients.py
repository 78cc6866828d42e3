import numpy as np
import pytest

from thermoporo import fem_core as fc
from thermoporo.effective_coefficients import (EffectiveCoefficients, ID_SYM6,
                                               tensor_to_voigt, upscale,
                                               voigt_to_tensor)
from thermoporo.errors import ConsistencyError
from thermoporo.params import Profile, TwoPhaseMaterial
from thermoporo.unit_cell import build_unit_cell

from conftest import contrast2_phases


def test_voigt_tensor_roundtrip(rng):
    T = rng.normal(size=(3, 3))
    T = 0.5 * (T + T.T)
    assert np.allclose(voigt_to_tensor(tensor_to_voigt(T)), T)


def test_strain_average_tensors_partition_identity(box_upscaled,
                                                   laminate_upscaled):
    for co, _ in (box_upscaled, laminate_upscaled):
        assert np.abs(co.C[1] + co.C[2] - ID_SYM6).max() <= 1e-12


def test_energy_and_direct_elasticity_routes_agree(box_upscaled):
    co, _ = box_upscaled
    scale = np.abs(co.A_hom).max()
    assert np.abs(co.A_hom - co.A_hom_direct).max() <= 1e-8 * scale
    assert co.gates["a_hom_energy_vs_direct"] <= 1e-8 * scale


def test_laminate_elasticity_matches_layered_closed_form(laminate_upscaled):
    # axis-0 laminate, equal halves of (lam, mu) = (1, 1) and (2, 2):
    # closed-form layered-medium moduli (raw tensor entries)
    co, _ = laminate_upscaled
    A = co.A_hom
    # normal modulus: harmonic mean of lam + 2 mu
    assert abs(A[0, 0] - 4.0) <= 1e-10
    # normal/transverse coupling: <lam/(lam+2mu)> times normal modulus
    assert abs(A[0, 1] - 4.0 / 3.0) <= 1e-10
    assert abs(A[0, 2] - 4.0 / 3.0) <= 1e-10
    # transverse modulus: <lam+2mu> - <lam^2/(lam+2mu)> + <lam/(lam+2mu)>^2 A00
    assert abs(A[1, 1] - 40.0 / 9.0) <= 1e-10
    assert abs(A[1, 2] - 13.0 / 9.0) <= 1e-10
    # shear in the layering plane: arithmetic mean of mu
    assert abs(A[3, 3] - 1.5) <= 1e-10
    # shear across the layers: harmonic mean of mu
    assert abs(A[4, 4] - 4.0 / 3.0) <= 1e-10
    assert abs(A[5, 5] - 4.0 / 3.0) <= 1e-10


def test_laminate_transport_blocks_normal_direction(laminate_upscaled,
                                                    material):
    co, _ = laminate_upscaled
    for m in (1, 2):
        kap = material.phase(m).kappa
        lam_hat = material.phase(m).lam_hat
        vol = co.volumes[m]
        assert np.abs(co.K[m] - np.diag([0.0, kap * vol, kap * vol])).max() \
            <= 1e-10
        assert np.abs(co.L[m] - np.diag([0.0, lam_hat * vol,
                                         lam_hat * vol])).max() <= 1e-10


def test_interior_inclusion_couplings_vanish(box_upscaled):
    co, _ = box_upscaled
    for T in (co.K[2], co.L[2], co.B[2], co.D[2]):
        assert np.abs(T).max() <= 1e-10


def test_matrix_mobility_bounds(box_upscaled, material):
    co, _ = box_upscaled
    K1 = co.K[1]
    assert np.abs(K1 - K1.T).max() <= 1e-12
    ev = np.linalg.eigvalsh(K1)
    assert ev.min() > 0.0
    assert ev.max() < material.phase1.kappa * co.volumes[1]


def test_pressure_coupling_proportional_to_mobility(box_upscaled,
                                                    laminate_upscaled,
                                                    material):
    # B and K are built from the same corrector gradients, D and L likewise
    for co, _ in (box_upscaled, laminate_upscaled):
        for m in (1, 2):
            ph = material.phase(m)
            assert np.abs(co.B[m] - (ph.beta / ph.kappa) * co.K[m]).max() \
                <= 1e-12
            assert np.abs(co.D[m] - (ph.gamma / ph.lam_hat) * co.L[m]).max() \
                <= 1e-12


def test_cross_identities(box_upscaled, laminate_upscaled, material):
    for co, _ in (box_upscaled, laminate_upscaled):
        for m in (1, 2):
            ph = material.phase(m)
            assert np.abs(ph.beta * co.K[m] - ph.kappa * co.B[m].T).max() \
                <= 1e-12
            assert np.abs(ph.gamma * co.L[m] - ph.lam_hat * co.D[m].T).max() \
                <= 1e-12


def test_elasticity_between_reuss_and_voigt_bounds(box_upscaled, material):
    co, _ = box_upscaled
    W = np.sqrt(fc.VOIGT_WEIGHTS)
    A1 = material.phase1.voigt()
    A2 = material.phase2.voigt()
    v1, v2 = co.volumes[1], co.volumes[2]

    def mandel(M):
        return np.diag(W) @ M @ np.diag(W)

    voigt_bound = mandel(v1 * A1 + v2 * A2)
    reuss_bound = np.linalg.inv(v1 * np.linalg.inv(mandel(A1))
                                + v2 * np.linalg.inv(mandel(A2)))
    Ah = mandel(co.A_hom)
    assert np.linalg.eigvalsh(voigt_bound - Ah).min() >= -1e-10
    assert np.linalg.eigvalsh(Ah - reuss_bound).min() >= -1e-10


def test_scalar_stars_are_volume_weighted(box_upscaled, material):
    co, _ = box_upscaled
    for m in (1, 2):
        ph = material.phase(m)
        assert abs(co.phi_star[m] - ph.phi * co.volumes[m]) <= 1e-14
        assert abs(co.alpha_star[m] - ph.alpha * co.volumes[m]) <= 1e-14
        assert abs(co.c_star[m] - ph.c * co.volumes[m]) <= 1e-14
    assert abs(co.volumes[1] - 7.0 / 8.0) <= 1e-14
    assert abs(co.volumes[2] - 1.0 / 8.0) <= 1e-14


def test_constant_barrier_transfer_coefficients(box_upscaled):
    co, _ = box_upscaled
    assert abs(co.zeta_star - co.interface_area) <= 1e-12
    assert abs(co.omega_star - co.interface_area) <= 1e-12
    assert abs(co.interface_area - 1.5) <= 1e-12


def test_affine_barrier_transfer_coefficient(box_cell):
    p1, p2 = contrast2_phases()
    mat = TwoPhaseMaterial(p1, p2,
                           Profile("affine", c0=1.0, grad=[0.0, 0.0, 1.0]),
                           Profile("constant", value=2.0))
    co, _ = upscale(box_cell, mat)
    # int_Sigma (1 + z): area 1.5 plus int z = 0.0625 + 0.1875 + 4 * 0.125
    assert abs(co.zeta_star - 2.25) <= 1e-12
    assert abs(co.omega_star - 3.0) <= 1e-12


def test_storage_trace_matches_divergence_average(box_upscaled):
    co, _ = box_upscaled
    for m in (1, 2):
        tr = co.storage_trace(m)
        T = voigt_to_tensor(tr)
        assert np.allclose(T, T.T)
        # contracting the identity strain gives tr(C_m : I) = int (1 + div w)
        e_id = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        val = tr @ (fc.VOIGT_WEIGHTS * e_id)
        direct = (co.C[m] @ (fc.VOIGT_WEIGHTS * e_id))[:3].sum()
        assert abs(val - direct) <= 1e-12


def test_stress_evaluation(box_upscaled):
    co, _ = box_upscaled
    e = np.array([0.1, 0.0, 0.0, 0.0, 0.0, 0.05])
    s0 = co.stress(e, p=(0.0, 0.0), th=(0.0, 0.0))
    assert np.allclose(s0, co.A_hom @ (fc.VOIGT_WEIGHTS * e))
    s1 = co.stress(e, p=(2.0, 0.0), th=(0.0, 0.0))
    assert np.allclose(s0 - s1, 2.0 * tensor_to_voigt(co.B[1]))


def test_json_roundtrip(tmp_path, box_upscaled):
    co, _ = box_upscaled
    path = tmp_path / "coeffs.json"
    co.save_json(path)
    back = EffectiveCoefficients.load_json(path)
    assert np.array_equal(back.A_hom, co.A_hom)
    for m in (1, 2):
        assert np.array_equal(back.K[m], co.K[m])
        assert np.array_equal(back.C[m], co.C[m])
        assert back.phi_star[m] == co.phi_star[m]
    assert back.zeta_star == co.zeta_star
    assert back.cell_flux_reading == co.cell_flux_reading
    with pytest.raises(ConsistencyError):
        EffectiveCoefficients.from_json_dict({"format": "something-else"})


def test_csv_export(tmp_path, box_upscaled):
    import csv
    co, _ = box_upscaled
    path = tmp_path / "coeffs.csv"
    co.save_csv(path)
    with open(path) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 231
    table = {(r["coefficient"], r["i"], r["j"]): float(r["value"])
             for r in rows}
    assert table[("A_hom", "0", "0")] == pytest.approx(co.A_hom[0, 0])
    assert table[("zeta_star", "-1", "-1")] == pytest.approx(co.zeta_star)
    assert table[("volume_Y2", "-1", "-1")] == pytest.approx(0.125)


def test_swapped_phases_swap_coefficients(box_cell, material):
    co, _ = upscale(box_cell, material)
    co_sw, _ = upscale(box_cell.swapped(), material.swapped())
    assert np.abs(co.A_hom - co_sw.A_hom).max() <= 1e-9
    for m in (1, 2):
        o = 3 - m
        assert np.abs(co.K[m] - co_sw.K[o]).max() <= 1e-9
        assert np.abs(co.B[m] - co_sw.B[o]).max() <= 1e-9
        assert abs(co.volumes[m] - co_sw.volumes[o]) <= 1e-14
        assert abs(co.phi_star[m] - co_sw.phi_star[o]) <= 1e-14
    assert abs(co.zeta_star - co_sw.zeta_star) <= 1e-12


def test_homogeneous_material_reproduces_phase_elasticity(
        box_cell, homogeneous_material):
    co, _ = upscale(box_cell, homogeneous_material)
    A1 = homogeneous_material.phase1.voigt()
    assert np.abs(co.A_hom - A1).max() <= 1e-8 * np.abs(A1).max()
    for m in (1, 2):
        assert np.abs(co.C[m] - co.volumes[m] * ID_SYM6).max() <= 1e-10
