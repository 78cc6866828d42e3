import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from thermoporo.errors import (AlignmentError, ConfigError,
                               DegenerateGeometryError, ScaleError)
from thermoporo.unit_cell import MicroMesh, UnitCellMesh, build_unit_cell


def test_box_cell_volumes_and_area(box_cell):
    assert abs(box_cell.volume(2) - 0.125) < 1e-15
    assert abs(box_cell.volume(1) - 0.875) < 1e-15
    assert abs(box_cell.interface.area - 6 * 0.25) < 1e-15
    assert box_cell.phase2_strictly_interior


def test_laminate_cell(laminate_cell):
    assert abs(laminate_cell.volume(2) - 0.5) < 1e-15
    # two wrap-around interface planes of unit area
    assert abs(laminate_cell.interface.area - 2.0) < 1e-15
    assert not laminate_cell.phase2_strictly_interior


def test_box_misaligned_bounds_raise():
    with pytest.raises(AlignmentError):
        build_unit_cell({"kind": "box", "lo": [0.3, 0.25, 0.25],
                         "hi": [0.75, 0.75, 0.75], "resolution": 4})


def test_box_touching_boundary_raises():
    with pytest.raises(DegenerateGeometryError):
        build_unit_cell({"kind": "box", "lo": [0.0, 0.25, 0.25],
                         "hi": [0.75, 0.75, 0.75], "resolution": 4})


def test_single_phase_geometry_rejected():
    with pytest.raises(DegenerateGeometryError):
        build_unit_cell({"kind": "box", "lo": [0.0, 0.0, 0.0],
                         "hi": [1.0, 1.0, 1.0], "resolution": 4,
                         "allow_boundary_contact": True})


def test_mask_geometry_volumes():
    vox = [[0, 0, 0], [1, 0, 0]]
    cell = build_unit_cell({"kind": "mask", "resolution": 3,
                            "phase2_voxels": vox})
    assert abs(cell.volume(2) - 2 / 27) < 1e-15
    # brick of two voxels: surface = 2*(1+1+2)/9... faces: 2*5 - 2 shared
    assert abs(cell.interface.area - 10 / 9) < 1e-14


def test_disconnected_matrix_rejected():
    # inclusion slab cuts the cell in two along axis 0; with periodic wrap
    # the matrix stays connected, so cut twice
    n = 4
    vox = []
    for j in range(n):
        for k in range(n):
            vox.append([0, j, k])
            vox.append([2, j, k])
    with pytest.raises(ConfigError):
        build_unit_cell({"kind": "mask", "resolution": n,
                         "phase2_voxels": vox})


def test_phase_node_maps_cover(box_cell):
    for m in (1, 2):
        mp, nred = box_cell.phase_dof_map(m)
        nodes = box_cell.phase_nodes(m)
        assert nred == nodes.size
        assert np.array_equal(np.sort(mp[nodes]), np.arange(nred))
        outside = np.setdiff1d(np.arange(box_cell.grid.n_nodes), nodes)
        assert np.all(mp[outside] == -1)


def test_face_set_quadrature_constant(box_cell):
    faces = box_cell.interface
    val = faces.integrate(lambda pts: np.ones(pts.shape[0]))
    assert abs(val - faces.area) < 1e-14


def test_face_set_quadrature_affine(box_cell):
    # int over the cube surface of z: by symmetry equals area * 0.5
    faces = box_cell.interface
    val = faces.integrate(lambda pts: pts[:, 2])
    assert abs(val - faces.area * 0.5) < 1e-14


def test_micro_mesh_tiling(box_cell):
    micro = MicroMesh(box_cell, 0.25)
    n = box_cell.resolution
    assert micro.grid.N == 4 * n
    # labels tile periodically
    lab = micro.labels3
    for (i, j, k) in ((5, 9, 2), (11, 0, 15), (7, 7, 7)):
        assert lab[i, j, k] == box_cell.labels3[i % n, j % n, k % n]
    assert abs(micro.interface_area - box_cell.interface.area / 0.25) < 1e-12


def test_micro_mesh_rejects_bad_eps(box_cell):
    with pytest.raises(ScaleError):
        MicroMesh(box_cell, 0.3)
    with pytest.raises(ScaleError):
        MicroMesh(box_cell, 1.5)


def test_micro_barrier_samples_cell_profile(box_cell):
    from thermoporo.params import Profile

    micro = MicroMesh(box_cell, 0.5)
    prof = Profile("affine", c0=1.0, grad=[0.0, 0.0, 1.0])
    qp = micro.barrier_qp(prof)
    assert qp.shape == (micro.interface.count, 4)
    # eps * profile(frac(x/eps)) stays within eps * [min, max] of the profile
    assert np.all(qp >= 0.5 * 1.0 - 1e-12)
    assert np.all(qp <= 0.5 * 2.0 + 1e-12)


def test_swapped_cell_relabels(box_cell):
    sw = box_cell.swapped()
    assert abs(sw.volume(1) - box_cell.volume(2)) < 1e-15
    assert np.array_equal(sw.labels == 1, box_cell.labels == 2)
    assert abs(sw.interface.area - box_cell.interface.area) < 1e-15


def _brute_force_interface_count(labels3):
    n = labels3.shape[0]
    cnt = 0
    for axis in range(3):
        rolled = np.roll(labels3, -1, axis=axis)
        cnt += int((labels3 != rolled).sum())
    return cnt


@given(st.sets(st.tuples(st.integers(0, 2), st.integers(0, 2),
                         st.integers(0, 2)), min_size=1, max_size=8))
@settings(max_examples=40, deadline=None)
def test_mask_interface_face_count_matches_brute_force(vox):
    labels3 = np.ones((3, 3, 3), dtype=np.int8)
    for (i, j, k) in vox:
        labels3[i, j, k] = 2
    if np.all(labels3 == 2):
        return
    mesh = UnitCellMesh(labels3)
    expected = _brute_force_interface_count(labels3)
    assert mesh.interface.count == expected
    assert abs(mesh.interface.area - expected * (1 / 3) ** 2) < 1e-14
    assert abs(mesh.volume(1) + mesh.volume(2) - 1.0) < 1e-15
