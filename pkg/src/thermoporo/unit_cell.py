"""Voxelized two-phase periodic unit cell and its epsilon-tilings.

The unit cell Y = [0,1)^3 is split into phase 1 (connected matrix) and
phase 2 (inclusions) on a uniform n^3 voxel grid; the interface is the set
of voxel faces separating the phases, so all geometry is resolved exactly
by the mesh. Micro domains are built by tiling the cell R times per axis
(eps = 1/R) onto a bounded lattice grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import AlignmentError, DegenerateGeometryError, ScaleError
from .fem_core import LatticeGrid, PeriodicGrid, tables

_ALIGN_TOL = 1e-9


@dataclass
class FaceSet:
    """Axis-aligned quadrilateral faces separating phase-1 and phase-2 voxels.

    plane is the lattice index of the face along its normal axis (coordinate
    plane*h); c1/c2 are the voxel indices along the two tangent axes (taken
    in increasing axis order). lower/upper are the phase labels of the voxels
    below and above the face along the normal.
    """

    axis: np.ndarray
    plane: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    h: float

    @property
    def count(self) -> int:
        return int(self.axis.shape[0])

    @property
    def area(self) -> float:
        return self.count * self.h**2

    def node_triples(self) -> np.ndarray:
        """(nf, 4, 3) integer lattice coordinates of the face corner nodes,
        corner order matching the bilinear face shape functions."""
        tab = tables(self.h)
        nf = self.count
        out = np.empty((nf, 4, 3), dtype=np.int64)
        for d in range(3):
            t1, t2 = [a for a in range(3) if a != d]
            sel = self.axis == d
            if not np.any(sel):
                continue
            for corner, (o1, o2) in enumerate(tab.face_offs):
                out[sel, corner, d] = self.plane[sel]
                out[sel, corner, t1] = self.c1[sel] + o1
                out[sel, corner, t2] = self.c2[sel] + o2
        return out

    def node_ids(self, grid) -> np.ndarray:
        tri = self.node_triples()
        return grid.node_id(tri[:, :, 0], tri[:, :, 1], tri[:, :, 2])

    def qpoints(self) -> np.ndarray:
        """(nf, 4, 3) physical coordinates of the 2x2 Gauss points per face."""
        tab = tables(self.h)
        nf = self.count
        out = np.empty((nf, 4, 3))
        for d in range(3):
            t1, t2 = [a for a in range(3) if a != d]
            sel = self.axis == d
            if not np.any(sel):
                continue
            out[sel, :, d] = self.plane[sel, None] * self.h
            out[sel, :, t1] = (self.c1[sel, None] + tab.fqloc[None, :, 0]) * self.h
            out[sel, :, t2] = (self.c2[sel, None] + tab.fqloc[None, :, 1]) * self.h
        return out

    def integrate(self, fn) -> float:
        """Surface integral of fn(points) over the face set (2x2 Gauss exact
        for bilinear integrands)."""
        if self.count == 0:
            return 0.0
        tab = tables(self.h)
        pts = self.qpoints().reshape(-1, 3)
        vals = np.asarray(fn(pts), float).reshape(self.count, 4)
        return float(np.einsum("q,fq->", tab.fwq, vals))


def _detect_faces(labels3: np.ndarray, h: float, wrap: bool) -> FaceSet:
    n_ax = labels3.shape
    ax_l, pl_l, c1_l, c2_l, lo_l, up_l = [], [], [], [], [], []
    for d in range(3):
        t1, t2 = [a for a in range(3) if a != d]
        if wrap:
            sel = labels3 != np.roll(labels3, -1, axis=d)
            idx = np.argwhere(sel)
            plane = (idx[:, d] + 1) % n_ax[d]
        else:
            lo_sl = [slice(None)] * 3
            hi_sl = [slice(None)] * 3
            lo_sl[d] = slice(0, -1)
            hi_sl[d] = slice(1, None)
            sel = labels3[tuple(lo_sl)] != labels3[tuple(hi_sl)]
            idx = np.argwhere(sel)
            plane = idx[:, d] + 1
        lower_lab = labels3[tuple(idx.T)]
        up_idx = idx.copy()
        up_idx[:, d] = (idx[:, d] + 1) % n_ax[d] if wrap else idx[:, d] + 1
        upper_lab = labels3[tuple(up_idx.T)]
        ax_l.append(np.full(idx.shape[0], d, dtype=np.int8))
        pl_l.append(plane)
        c1_l.append(idx[:, t1])
        c2_l.append(idx[:, t2])
        lo_l.append(lower_lab)
        up_l.append(upper_lab)
    return FaceSet(
        axis=np.concatenate(ax_l), plane=np.concatenate(pl_l),
        c1=np.concatenate(c1_l), c2=np.concatenate(c2_l),
        lower=np.concatenate(lo_l), upper=np.concatenate(up_l), h=h)


class UnitCellMesh:
    """Periodic voxel mesh of the unit cell with phase labels."""

    def __init__(self, labels3: np.ndarray, name: str = ""):
        labels3 = np.asarray(labels3)
        if labels3.ndim != 3 or len(set(labels3.shape)) != 1:
            raise DegenerateGeometryError("labels must form a cubic voxel array")
        n = labels3.shape[0]
        if n < 2:
            raise DegenerateGeometryError("resolution must be at least 2")
        if not np.isin(labels3, (1, 2)).all():
            raise DegenerateGeometryError("phase labels must be 1 or 2")
        self.resolution = n
        self.grid = PeriodicGrid(n)
        self.labels = labels3.astype(np.int8).ravel()
        self.labels3 = labels3.astype(np.int8)
        self.name = name
        counts = np.bincount(self.labels, minlength=3)
        if counts[1] == 0 or counts[2] == 0:
            raise DegenerateGeometryError("both phases must occupy at least one voxel")
        self.interface = _detect_faces(self.labels3, self.grid.h, wrap=True)
        if self.interface.count == 0:
            raise DegenerateGeometryError("phases do not share an interface")
        self._node_cache: dict = {}

    def mask(self, m: int) -> np.ndarray:
        return self.labels == m

    def volume(self, m: int) -> float:
        return float(np.count_nonzero(self.labels == m)) * self.grid.h**3

    @property
    def phase2_strictly_interior(self) -> bool:
        L = self.labels3
        n = self.resolution
        for d in range(3):
            lo = np.take(L, 0, axis=d)
            hi = np.take(L, n - 1, axis=d)
            if np.any(lo == 2) or np.any(hi == 2):
                return False
        return True

    def phase_nodes(self, m: int) -> np.ndarray:
        """Sorted ids of nodes belonging to at least one phase-m voxel."""
        key = ("nodes", m)
        if key not in self._node_cache:
            ids = np.unique(self.grid.elems[self.mask(m)])
            self._node_cache[key] = ids
        return self._node_cache[key]

    def phase_dof_map(self, m: int):
        """(map, count): map[node] = reduced dof id or -1 outside phase m."""
        key = ("map", m)
        if key not in self._node_cache:
            ids = self.phase_nodes(m)
            mp = np.full(self.grid.n_nodes, -1, dtype=np.int64)
            mp[ids] = np.arange(ids.shape[0])
            self._node_cache[key] = (mp, ids.shape[0])
        return self._node_cache[key]

    def phase_node_components(self, m: int):
        """Connected components of the phase-m node set, as lists of reduced
        dof indices (components of the zero-flux diffusion kernel)."""
        key = ("comps", m)
        if key not in self._node_cache:
            mp, nred = self.phase_dof_map(m)
            elems = mp[self.grid.elems[self.mask(m)]]
            ne = elems.shape[0]
            B = sp.coo_matrix(
                (np.ones(ne * 8), (np.repeat(np.arange(ne), 8), elems.ravel())),
                shape=(ne, nred)).tocsr()
            adj = (B.T @ B).tocsr()
            ncomp, assign = connected_components(adj, directed=False)
            comps = [np.flatnonzero(assign == c) for c in range(ncomp)]
            self._node_cache[key] = comps
        return self._node_cache[key]

    def matrix_connected(self) -> bool:
        return len(self.phase_node_components(1)) == 1

    def swapped(self) -> "UnitCellMesh":
        swapped = np.where(self.labels3 == 1, 2, 1).astype(np.int8)
        return UnitCellMesh(swapped, name=self.name + "-swapped")


def _aligned_index(x: float, n: int, what: str) -> int:
    v = x * n
    r = round(v)
    if abs(v - r) > _ALIGN_TOL * max(1.0, n):
        raise AlignmentError(
            f"{what} = {x} does not lie on the 1/{n} voxel lattice")
    return int(r)


def build_unit_cell(geometry: dict, resolution: Optional[int] = None) -> UnitCellMesh:
    """Construct the labeled unit cell from a geometry description.

    Kinds: "box" (axis-aligned inclusion given by lo/hi corners), "laminate"
    (phase-2 slab of given thickness normal to an axis), "mask" (explicit
    phase-2 voxel list). Box and laminate bounds must lie on the voxel
    lattice; misaligned input is rejected rather than snapped.
    """
    geometry = dict(geometry)
    kind = geometry.get("kind")
    n = int(geometry.get("resolution", resolution or 0))
    if resolution is not None:
        n = int(resolution)
    if n < 2:
        raise DegenerateGeometryError(f"resolution {n} too small (need >= 2)")
    name = geometry.get("name", kind or "cell")

    if kind == "box":
        lo = [float(v) for v in geometry["lo"]]
        hi = [float(v) for v in geometry["hi"]]
        ilo = [_aligned_index(lo[d], n, f"box lo[{d}]") for d in range(3)]
        ihi = [_aligned_index(hi[d], n, f"box hi[{d}]") for d in range(3)]
        for d in range(3):
            if not (0 <= ilo[d] < ihi[d] <= n):
                raise DegenerateGeometryError(
                    f"box bounds invalid along axis {d}: [{lo[d]}, {hi[d]}]")
        labels3 = np.ones((n, n, n), dtype=np.int8)
        labels3[ilo[0]:ihi[0], ilo[1]:ihi[1], ilo[2]:ihi[2]] = 2
        mesh = UnitCellMesh(labels3, name=name)
        touches = not mesh.phase2_strictly_interior
        if touches and not geometry.get("allow_boundary_contact", False):
            raise DegenerateGeometryError(
                "box inclusion touches the cell boundary; set "
                "allow_boundary_contact to build it anyway")
    elif kind == "laminate":
        axis = int(geometry.get("axis", 0))
        if axis not in (0, 1, 2):
            raise DegenerateGeometryError(f"laminate axis {axis} not in 0..2")
        t = float(geometry["thickness"])
        it = _aligned_index(t, n, "laminate thickness")
        if not (0 < it < n):
            raise DegenerateGeometryError(f"laminate thickness {t} degenerate")
        labels3 = np.ones((n, n, n), dtype=np.int8)
        sl = [slice(None)] * 3
        sl[axis] = slice(0, it)
        labels3[tuple(sl)] = 2
        mesh = UnitCellMesh(labels3, name=name)
    elif kind == "mask":
        vox = np.asarray(geometry["phase2_voxels"], dtype=np.int64)
        if vox.ndim != 2 or vox.shape[1] != 3:
            raise DegenerateGeometryError("phase2_voxels must be a list of (i,j,k)")
        if np.any(vox < 0) or np.any(vox >= n):
            raise DegenerateGeometryError("phase2 voxel index out of range")
        labels3 = np.ones((n, n, n), dtype=np.int8)
        labels3[vox[:, 0], vox[:, 1], vox[:, 2]] = 2
        mesh = UnitCellMesh(labels3, name=name)
    else:
        raise DegenerateGeometryError(f"unknown geometry kind {kind!r}")

    if not mesh.matrix_connected():
        raise DegenerateGeometryError(
            "phase 1 (matrix) is not connected across the periodic cell")
    return mesh


class MicroMesh:
    """Bounded eps-tiling of the unit cell with one-sided scalar fields.

    Displacement nodes are shared across the interface; the pressure and
    temperature fields of each phase live only on the nodes touched by that
    phase, so nodes on the interface carry one unknown per side.
    """

    def __init__(self, cell: UnitCellMesh, eps: float,
                 resolution_per_cell: Optional[int] = None):
        if eps <= 0 or eps > 1:
            raise ScaleError(f"eps = {eps} outside (0, 1]")
        R = 1.0 / eps
        if abs(R - round(R)) > 1e-9:
            raise ScaleError(f"1/eps = {R} is not an integer; the cell cannot tile "
                             "the unit domain")
        R = int(round(R))
        if resolution_per_cell is not None and resolution_per_cell != cell.resolution:
            raise ScaleError("resolution_per_cell must match the cell mesh; rebuild "
                             "the cell at the target resolution instead")
        n = cell.resolution
        self.cell = cell
        self.eps = float(eps)
        self.copies = R
        N = R * n
        self.grid = LatticeGrid(N, extent=1.0)
        self.labels3 = np.tile(cell.labels3, (R, R, R))
        self.labels = self.labels3.ravel()
        self.interface = _detect_faces(self.labels3, self.grid.h, wrap=False)
        self._node_cache: dict = {}

    def mask(self, m: int) -> np.ndarray:
        return self.labels == m

    def volume(self, m: int) -> float:
        return float(np.count_nonzero(self.labels == m)) * self.grid.h**3

    @property
    def interface_area(self) -> float:
        return self.interface.area

    def phase_nodes(self, m: int) -> np.ndarray:
        key = ("nodes", m)
        if key not in self._node_cache:
            self._node_cache[key] = np.unique(self.grid.elems[self.mask(m)])
        return self._node_cache[key]

    def phase_dof_map(self, m: int):
        key = ("map", m)
        if key not in self._node_cache:
            ids = self.phase_nodes(m)
            mp = np.full(self.grid.n_nodes, -1, dtype=np.int64)
            mp[ids] = np.arange(ids.shape[0])
            self._node_cache[key] = (mp, ids.shape[0])
        return self._node_cache[key]

    def n_unknowns(self) -> int:
        nu = 3 * self.grid.n_nodes
        return nu + sum(self.phase_nodes(m).shape[0] for m in (1, 2)) * 2

    def barrier_qp(self, profile) -> np.ndarray:
        """eps-scaled barrier values at the interface face Gauss points:
        eps * profile(frac(x / eps))."""
        pts = self.interface.qpoints().reshape(-1, 3)
        y = np.mod(pts / self.eps, 1.0)
        vals = self.eps * np.asarray(profile(y), float)
        return vals.reshape(self.interface.count, 4)


def tile_micro_domain(cell: UnitCellMesh, eps: float,
                      resolution_per_cell: Optional[int] = None) -> MicroMesh:
    return MicroMesh(cell, eps, resolution_per_cell)
