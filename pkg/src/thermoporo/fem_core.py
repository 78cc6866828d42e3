"""Trilinear hexahedral FEM core on structured voxel grids.

Everything lives on axis-aligned uniform grids, so element matrices are
computed once per mesh size and reused for every cell. Coefficients are
piecewise constant per voxel; interfaces between the two phases lie on
element faces. Quadrature is 2x2x2 Gauss, which integrates every element
integrand appearing here exactly.

Solvers: Jacobi-preconditioned CG for the symmetric positive (semi)definite
cell problems with quotient spaces handled by orthogonal projection inside
the iteration (no node pinning), and a monolithic solver for the coupled
time-step systems that picks dense elimination, sparse LU or preconditioned
GMRES by problem size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConsistencyError, SolverError

# Local node offsets (di, dj, dk); local vector dof = 3*node + component.
OFFS = np.array([
    (0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0),
    (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1),
], dtype=np.int64)

# Voigt pair order used for strains and stiffness storage (raw tensor entries).
VOIGT = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
VOIGT_WEIGHTS = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])

_G2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def _shape_values(loc: np.ndarray) -> np.ndarray:
    """N_a at local coordinates in [0,1]^3; loc (m,3) -> (m,8)."""
    out = np.ones((loc.shape[0], 8))
    for a in range(8):
        for d in range(3):
            t = loc[:, d]
            out[:, a] = out[:, a] * (t if OFFS[a, d] else 1.0 - t)
    return out


def _shape_grads_ref(loc: np.ndarray) -> np.ndarray:
    """dN_a/dxi_d at local coordinates; (m,3) -> (m,8,3)."""
    m = loc.shape[0]
    out = np.ones((m, 8, 3))
    for a in range(8):
        for d in range(3):
            for e in range(3):
                t = loc[:, e]
                if e == d:
                    out[:, a, d] *= (1.0 if OFFS[a, e] else -1.0)
                else:
                    out[:, a, d] *= (t if OFFS[a, e] else 1.0 - t)
    return out


class ElementTables:
    """Exact element integrals for a cube of edge h."""

    def __init__(self, h: float):
        self.h = float(h)
        pts = np.array([(x, y, z) for z in _G2 for y in _G2 for x in _G2])
        self.qloc = pts
        self.SH = _shape_values(pts)                    # (8q, 8)
        self.DREF = _shape_grads_ref(pts)               # (8q, 8, 3)
        w = self.h**3 / 8.0
        self.wq = np.full(8, w)
        # scalar mass / stiffness, mixed tensor U[a,b,j] = int N_a dN_b/dx_j
        self.MS = np.einsum("q,qa,qb->ab", self.wq, self.SH, self.SH)
        self.KS = np.einsum("q,qad,qbd->ab", self.wq, self.DREF, self.DREF) / self.h**2
        self.U = np.einsum("q,qa,qbj->abj", self.wq, self.SH, self.DREF) / self.h
        self.GINT = np.einsum("q,qaj->aj", self.wq, self.DREF) / self.h
        # strain-displacement matrices at quadrature points: BV[q, voigt, dof]
        BV = np.zeros((8, 6, 24))
        G = self.DREF / self.h
        for a in range(8):
            for c in range(3):
                dof = 3 * a + c
                for m, (r, s) in enumerate(VOIGT):
                    # e_rs(N_a e_c) = 0.5*(delta_cr dN/dx_s + delta_cs dN/dx_r)
                    BV[:, m, dof] = 0.5 * ((c == r) * G[:, a, s] + (c == s) * G[:, a, r])
        self.BV = BV
        self.ESTR = np.einsum("q,qmd->dm", self.wq, BV)  # (24 dof, 6 voigt)
        from .params import isotropic_voigt
        self.K_LAM = self.stiffness_from_voigt(isotropic_voigt(1.0, 0.0))
        self.K_MU = self.stiffness_from_voigt(isotropic_voigt(0.0, 1.0))
        # bilinear face shapes on 2x2 Gauss points, node order (t1,t2) in
        # [(0,0),(1,0),(0,1),(1,1)]
        fpts = np.array([(x, y) for y in _G2 for x in _G2])
        self.fqloc = fpts
        FSH = np.ones((4, 4))
        foffs = [(0, 0), (1, 0), (0, 1), (1, 1)]
        for a, (o1, o2) in enumerate(foffs):
            FSH[:, a] = (fpts[:, 0] if o1 else 1.0 - fpts[:, 0]) * \
                        (fpts[:, 1] if o2 else 1.0 - fpts[:, 1])
        self.FSH = FSH
        self.face_offs = np.array(foffs, dtype=np.int64)
        self.fwq = np.full(4, self.h**2 / 4.0)

    def stiffness_from_voigt(self, V: np.ndarray) -> np.ndarray:
        Wv = np.diag(VOIGT_WEIGHTS)
        VW = Wv @ V @ Wv
        return np.einsum("q,qmd,mn,qne->de", self.wq, self.BV, VW, self.BV)

    def scalar_stiffness_matrixcoeff(self, K: np.ndarray) -> np.ndarray:
        G = self.DREF / self.h
        return np.einsum("q,qad,de,qbe->ab", self.wq, G, np.asarray(K, float), G)

    def strain_coupling(self, M: np.ndarray) -> np.ndarray:
        """L[a, dof] = int N_a (M : grad(N_b e_d)), dof = 3b+d."""
        M = np.asarray(M, float)
        L = np.einsum("dj,abj->abd", M, self.U)  # (a, b, d)
        return L.reshape(8, 24)

    def grad_coupling(self, B: Optional[np.ndarray] = None) -> np.ndarray:
        """G[dof, b] = int (B grad N_b) . (N_a e_c), dof = 3a+c.

        With B=None this is the plain gradient coupling int (grad N_b)_c N_a.
        """
        if B is None:
            G = self.U.transpose(0, 2, 1)  # (a, c, b)
        else:
            G = np.einsum("cj,abj->acb", np.asarray(B, float), self.U)
        return G.reshape(24, 8)

    def div_coupling(self) -> np.ndarray:
        """L[a, dof] = int N_a div(N_b e_d), dof = 3b+d."""
        return self.U.reshape(8, 24)


_TABLE_CACHE: dict = {}


def tables(h: float) -> ElementTables:
    key = float(h)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = ElementTables(key)
    return _TABLE_CACHE[key]


# ---------------------------------------------------------------------------
# grids


class PeriodicGrid:
    """Uniform n^3 voxel grid on the unit cell with periodic node identification."""

    def __init__(self, n: int):
        self.n = int(n)
        self.h = 1.0 / self.n
        self.n_nodes = self.n**3
        self.n_elems = self.n**3
        I, J, K = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        elems = np.empty((self.n_elems, 8), dtype=np.int64)
        for a, (di, dj, dk) in enumerate(OFFS):
            elems[:, a] = ((((I + di) % n) * n + (J + dj) % n) * n + (K + dk) % n).ravel()
        self.elems = elems
        corners = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
        self.cell_corners = corners  # integer voxel indices in lex order
        self.node_coords = corners * self.h  # canonical representative corner

    periodic = True

    def node_id(self, i, j, k):
        n = self.n
        return ((np.asarray(i) % n) * n + np.asarray(j) % n) * n + np.asarray(k) % n

    def locate(self, pts: np.ndarray):
        """Map unit-cell points to (linear element index, local coords)."""
        y = np.mod(np.asarray(pts, float), 1.0)
        cell = np.clip(np.floor(y / self.h).astype(np.int64), 0, self.n - 1)
        loc = y / self.h - cell
        lin = (cell[:, 0] * self.n + cell[:, 1]) * self.n + cell[:, 2]
        return lin, loc


class LatticeGrid:
    """Uniform N^3 voxel grid on a box [0, extent]^3 with (N+1)^3 distinct nodes."""

    def __init__(self, N: int, extent: float = 1.0):
        self.N = int(N)
        self.extent = float(extent)
        self.h = self.extent / self.N
        S = self.N + 1
        self.S = S
        self.n_nodes = S**3
        self.n_elems = self.N**3
        I, J, K = np.meshgrid(np.arange(self.N), np.arange(self.N), np.arange(self.N),
                              indexing="ij")
        elems = np.empty((self.n_elems, 8), dtype=np.int64)
        for a, (di, dj, dk) in enumerate(OFFS):
            elems[:, a] = (((I + di) * S + (J + dj)) * S + (K + dk)).ravel()
        self.elems = elems
        ii, jj, kk = np.meshgrid(np.arange(S), np.arange(S), np.arange(S), indexing="ij")
        self.node_coords = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1) * self.h
        on_bnd = ((ii == 0) | (ii == self.N) | (jj == 0) | (jj == self.N)
                  | (kk == 0) | (kk == self.N))
        self.boundary_nodes = np.flatnonzero(on_bnd.ravel())

    periodic = False

    def node_id(self, i, j, k):
        S = self.S
        return (np.asarray(i) * S + np.asarray(j)) * S + np.asarray(k)

    def locate(self, pts: np.ndarray):
        x = np.asarray(pts, float)
        cell = np.clip(np.floor(x / self.h).astype(np.int64), 0, self.N - 1)
        loc = x / self.h - cell
        lin = (cell[:, 0] * self.N + cell[:, 1]) * self.N + cell[:, 2]
        return lin, loc


def eval_nodal(grid, nodal: np.ndarray, pts: np.ndarray, gradients: bool = False):
    """Evaluate a nodal field (n_nodes, m) at arbitrary points (npts, 3).

    Returns values (npts, m) and, when requested, gradients (npts, m, 3).
    """
    nodal = np.asarray(nodal, float)
    squeeze = nodal.ndim == 1
    if squeeze:
        nodal = nodal[:, None]
    lin, loc = grid.locate(pts)
    SH = _shape_values(loc)
    nid = grid.elems[lin]                     # (npts, 8)
    vals = nodal[nid]                         # (npts, 8, m)
    out = np.einsum("pa,pam->pm", SH, vals)
    if not gradients:
        return (out[:, 0] if squeeze else out)
    DS = _shape_grads_ref(loc) / grid.h
    grad = np.einsum("pad,pam->pmd", DS, vals)
    if squeeze:
        return out[:, 0], grad[:, 0, :]
    return out, grad


# ---------------------------------------------------------------------------
# assembly

_CHUNK = 16384


def _coo_accumulate(row_dofs, col_dofs, data, shape):
    """Build a CSR matrix from element contributions, chunked to bound memory."""
    ne, lr = row_dofs.shape
    lc = col_dofs.shape[1]
    parts = []
    for s in range(0, ne, _CHUNK):
        e = min(s + _CHUNK, ne)
        r = np.repeat(row_dofs[s:e], lc, axis=1).ravel()
        c = np.tile(col_dofs[s:e], (1, lr)).ravel()
        d = data[s:e].reshape(e - s, lr * lc).ravel() if data.ndim == 3 else \
            np.broadcast_to(data.reshape(1, lr * lc), (e - s, lr * lc)).ravel()
        parts.append((r, c, d))
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    A = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def vector_dofs(elems: np.ndarray) -> np.ndarray:
    """(ne, 24) global vector dofs, node-major (dof = 3*node + comp)."""
    return (3 * elems[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 24)


def assemble_scalar_stiffness(grid, coeff, mask=None, n_dofs=None, dof_of_node=None,
                              matrix_coeff=None):
    """Stiffness int coeff grad(p).grad(q) over the (masked) elements.

    coeff: scalar per element (array or constant); matrix_coeff: single 3x3
    conductivity used for all elements instead. dof_of_node optionally remaps
    node ids to field dofs (used for the duplicated interface unknowns).
    """
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    if dof_of_node is not None:
        elems = dof_of_node[elems]
        if np.any(elems < 0):
            raise AssemblyError("element references a node without a dof in this field")
    n = n_dofs if n_dofs is not None else grid.n_nodes
    if matrix_coeff is not None:
        local = tab.scalar_stiffness_matrixcoeff(matrix_coeff)
        data = np.broadcast_to(local, (elems.shape[0], 8, 8))
    else:
        c = np.asarray(coeff, float)
        if c.ndim == 0:
            c = np.full(elems.shape[0], float(c))
        data = c[:, None, None] * tab.KS
    return _coo_accumulate(elems, elems, data, (n, n))


def assemble_scalar_mass(grid, coeff=1.0, mask=None, n_dofs=None, dof_of_node=None):
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    if dof_of_node is not None:
        elems = dof_of_node[elems]
    n = n_dofs if n_dofs is not None else grid.n_nodes
    c = np.asarray(coeff, float)
    if c.ndim == 0:
        c = np.full(elems.shape[0], float(c))
    data = c[:, None, None] * tab.MS
    return _coo_accumulate(elems, elems, data, (n, n))


def assemble_elastic_stiffness(grid, lam, mu, mask=None):
    """Elasticity stiffness with per-element isotropic moduli."""
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    dofs = vector_dofs(elems)
    lam = np.asarray(lam, float)
    mu = np.asarray(mu, float)
    if lam.ndim == 0:
        lam = np.full(elems.shape[0], float(lam))
    if mu.ndim == 0:
        mu = np.full(elems.shape[0], float(mu))
    data = lam[:, None, None] * tab.K_LAM + mu[:, None, None] * tab.K_MU
    return _coo_accumulate(dofs, dofs, data, (3 * grid.n_nodes, 3 * grid.n_nodes))


def assemble_voigt_stiffness(grid, V: np.ndarray):
    """Elasticity stiffness with one anisotropic stiffness (raw Voigt 6x6)."""
    tab = tables(grid.h)
    local = tab.stiffness_from_voigt(V)
    dofs = vector_dofs(grid.elems)
    data = np.broadcast_to(local, (grid.n_elems, 24, 24))
    return _coo_accumulate(dofs, dofs, data, (3 * grid.n_nodes, 3 * grid.n_nodes))


def assemble_div_coupling(grid, mask=None, n_scalar=None, dof_of_node=None, M=None,
                          scale=None):
    """Rows scalar, cols vector: int q (M : grad u) with M=I giving div(u) q.

    scale: optional per-element scalar multiplier (already restricted to the
    masked elements when a mask is given).
    """
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    rows = elems if dof_of_node is None else dof_of_node[elems]
    cols = vector_dofs(elems)
    local = tab.div_coupling() if M is None else tab.strain_coupling(M)
    n = n_scalar if n_scalar is not None else grid.n_nodes
    if scale is not None:
        data = np.asarray(scale, float)[:, None, None] * local
    else:
        data = np.broadcast_to(local, (elems.shape[0], 8, 24))
    return _coo_accumulate(rows, cols, data, (n, 3 * grid.n_nodes))


def assemble_grad_coupling(grid, mask=None, n_scalar=None, dof_of_node=None, B=None):
    """Rows vector, cols scalar: int (B grad p) . v (B=None -> plain grad p . v)."""
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    rows = vector_dofs(elems)
    cols = elems if dof_of_node is None else dof_of_node[elems]
    local = tab.grad_coupling(B)
    n = n_scalar if n_scalar is not None else grid.n_nodes
    data = np.broadcast_to(local, (elems.shape[0], 24, 8))
    return _coo_accumulate(rows, cols, data, (3 * grid.n_nodes, n))


def assemble_interface_coupling(face_nodes1, face_nodes2, face_coeff_qp, h,
                                n1, n2):
    """Jump coupling int_F zeta (p1 - p2)(q1 - q2) over quadrilateral faces.

    face_nodes1/2: (nf, 4) dof ids of the two one-sided traces at the same
    geometric nodes; face_coeff_qp: (nf, 4) barrier values at the 2x2 face
    Gauss points. Returns the four blocks (J11, J12, J21, J22) with
    J12 = J21^T carrying the negative cross terms.
    """
    tab = tables(h)
    nf = face_nodes1.shape[0]
    if nf == 0:
        return (sp.csr_matrix((n1, n1)), sp.csr_matrix((n1, n2)),
                sp.csr_matrix((n2, n1)), sp.csr_matrix((n2, n2)))
    # local face mass with coefficient evaluated per quadrature point
    w = tab.fwq  # (4,)
    data = np.einsum("q,fq,qa,qb->fab", w, face_coeff_qp, tab.FSH, tab.FSH)
    J11 = _coo_accumulate(face_nodes1, face_nodes1, data, (n1, n1))
    J22 = _coo_accumulate(face_nodes2, face_nodes2, data, (n2, n2))
    J12 = _coo_accumulate(face_nodes1, face_nodes2, -data, (n1, n2))
    J21 = _coo_accumulate(face_nodes2, face_nodes1, -data, (n2, n1))
    return J11, J12, J21, J22


def scalar_load(grid, value, mask=None, n_dofs=None, dof_of_node=None, fn=None):
    """Consistent load vector int s q over the (masked) elements.

    Either a constant `value` or a callable fn(points)->values evaluated at
    quadrature points.
    """
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    rows = elems if dof_of_node is None else dof_of_node[elems]
    n = n_dofs if n_dofs is not None else grid.n_nodes
    out = np.zeros(n)
    if fn is None:
        local = float(value) * tab.MS.sum(axis=1)  # value * int N_a
        np.add.at(out, rows.ravel(), np.broadcast_to(local, rows.shape).ravel())
        return out
    corners = _elem_corners(grid, mask)
    for s in range(0, elems.shape[0], _CHUNK):
        e = min(s + _CHUNK, elems.shape[0])
        pts = corners[s:e, None, :] + tab.qloc[None, :, :] * grid.h  # (m, 8q, 3)
        vals = fn(pts.reshape(-1, 3)).reshape(e - s, 8)
        contrib = np.einsum("q,mq,qa->ma", tab.wq, vals, tab.SH)
        np.add.at(out, rows[s:e].ravel(), contrib.ravel())
    return out


def vector_load(grid, value, mask=None, fn=None):
    """Consistent load int f . v; value is a 3-vector or fn(points)->(m,3)."""
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    dofs = vector_dofs(elems)
    out = np.zeros(3 * grid.n_nodes)
    if fn is None:
        v = np.asarray(value, float).reshape(3)
        local = (tab.MS.sum(axis=1)[:, None] * v[None, :]).reshape(24)
        np.add.at(out, dofs.ravel(), np.broadcast_to(local, dofs.shape).ravel())
        return out
    corners = _elem_corners(grid, mask)
    for s in range(0, elems.shape[0], _CHUNK):
        e = min(s + _CHUNK, elems.shape[0])
        pts = corners[s:e, None, :] + tab.qloc[None, :, :] * grid.h
        vals = fn(pts.reshape(-1, 3)).reshape(e - s, 8, 3)
        contrib = np.einsum("q,mqc,qa->mac", tab.wq, vals, tab.SH).reshape(e - s, 24)
        np.add.at(out, dofs[s:e].ravel(), contrib.ravel())
    return out


def _elem_corners(grid, mask=None):
    if isinstance(grid, PeriodicGrid):
        corners = grid.cell_corners * grid.h
    else:
        N = grid.N
        I, J, K = np.meshgrid(np.arange(N), np.arange(N), np.arange(N), indexing="ij")
        corners = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1) * grid.h
    return corners if mask is None else corners[mask]


def mass_weights(grid, mask=None, n_dofs=None, dof_of_node=None):
    """Integration weights int N_a over the (masked) elements (lumped mass)."""
    tab = tables(grid.h)
    elems = grid.elems if mask is None else grid.elems[mask]
    rows = elems if dof_of_node is None else dof_of_node[elems]
    n = n_dofs if n_dofs is not None else grid.n_nodes
    out = np.zeros(n)
    local = tab.MS.sum(axis=1)
    np.add.at(out, rows.ravel(), np.broadcast_to(local, rows.shape).ravel())
    return out


# ---------------------------------------------------------------------------
# constraints and solvers


@dataclass
class MeanZeroConstraint:
    """Quotient-space constraint: kernel of the operator is spanned by
    indicator vectors of `components` (per coordinate for block > 1).

    Euclidean-orthogonal projection is used inside the Krylov iteration; the
    returned representative is normalized to mass-weighted zero mean per
    component so it matches the continuum quotient convention.
    """

    components: list          # list of node-index arrays (within the dof set)
    block: int = 1
    weights: Optional[np.ndarray] = None  # per-dof integration weights

    def kernel_basis(self, n: int) -> np.ndarray:
        vecs = []
        for comp in self.components:
            for c in range(self.block):
                v = np.zeros(n)
                v[self.block * np.asarray(comp) + c] = 1.0
                v /= np.linalg.norm(v)
                vecs.append(v)
        return np.array(vecs)

    def projector(self, n: int) -> Callable[[np.ndarray], np.ndarray]:
        basis = self.kernel_basis(n)

        def project(x):
            for v in basis:
                x = x - (v @ x) * v
            return x

        return project

    def normalize_mean(self, x: np.ndarray) -> np.ndarray:
        if self.weights is None:
            return x
        x = x.copy()
        for comp in self.components:
            comp = np.asarray(comp)
            for c in range(self.block):
                idx = self.block * comp + c
                w = self.weights[idx]
                x[idx] -= (w @ x[idx]) / w.sum()
        return x


@dataclass
class DirichletConstraint:
    """Homogeneous Dirichlet dofs to eliminate before solving."""

    fixed: np.ndarray

    def free(self, n: int) -> np.ndarray:
        keep = np.ones(n, dtype=bool)
        keep[self.fixed] = False
        return np.flatnonzero(keep)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraint: object = None
    symmetric: bool = True

    def check_symmetry(self, tol: float = 1e-12):
        if not self.symmetric:
            return
        d = abs(self.matrix - self.matrix.T)
        scale = abs(self.matrix).max() or 1.0
        if d.max() > tol * scale:
            raise AssemblyError(f"matrix flagged symmetric has asymmetry {d.max():.3e} "
                                f"(relative {d.max()/scale:.3e})")


@dataclass
class FieldVector:
    values: np.ndarray
    space: str = ""
    iterations: int = 0
    residual: float = 0.0


def jacobi_pcg(A, b, *, project=None, tol=1e-10, maxiter=None, x0=None):
    """Jacobi-preconditioned CG; optional kernel projection applied to the
    right-hand side, to every preconditioned residual and to the iterates."""
    n = b.shape[0]
    if maxiter is None:
        maxiter = max(1000, 40 * int(np.sqrt(n)) + 200)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("nonpositive diagonal entry in SPD solve")
    dinv = 1.0 / diag
    x = np.zeros(n) if x0 is None else x0.copy()
    if project is not None:
        x = project(x)
    r = b - A @ x
    if project is not None:
        r = project(r)
    z = dinv * r
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = r @ z
    it = 0
    while True:
        rn = np.linalg.norm(r)
        if rn <= tol * bnorm:
            return x, it, rn / bnorm
        if it >= maxiter:
            raise SolverError(f"CG failed to converge in {maxiter} iterations "
                              f"(relative residual {rn/bnorm:.3e})",
                              residual=rn / bnorm, iterations=it)
        q = A @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        if project is not None:
            r = project(r)
        z = dinv * r
        if project is not None:
            z = project(z)
        rz_new = r @ z
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
        it += 1


def _dense_kernel_solve(A, b, basis):
    """Dense bordered solve for a symmetric PSD system with known kernel."""
    n = A.shape[0]
    k = basis.shape[0]
    M = np.zeros((n + k, n + k))
    M[:n, :n] = A.toarray() if sp.issparse(A) else A
    M[:n, n:] = basis.T
    M[n:, :n] = basis
    rhs = np.concatenate([b, np.zeros(k)])
    sol = np.linalg.solve(M, rhs)
    return sol[:n]


def solve_constrained(system: SparseSystem, tol: float = 1e-10,
                      dense_limit: int = 5000) -> FieldVector:
    """Solve a (constrained) symmetric positive (semi)definite system.

    Mean-zero constraints: the rhs kernel component is checked; components
    above 1e-10 relative are projected out with a warning, above 1e-4 the
    system is rejected as inconsistent. Dense elimination below dense_limit
    unknowns, Jacobi CG above.
    """
    A, b, con = system.matrix, system.rhs, system.constraint
    if isinstance(con, DirichletConstraint):
        free = con.free(b.shape[0])
        Ar = A[free][:, free].tocsr()
        br = b[free]
        inner = SparseSystem(Ar, br, None, system.symmetric)
        sol = solve_constrained(inner, tol=tol, dense_limit=dense_limit)
        full = np.zeros(b.shape[0])
        full[free] = sol.values
        return FieldVector(full, iterations=sol.iterations, residual=sol.residual)

    # numerically zero rhs (e.g. homogeneous material): solution is zero in
    # the quotient space, and relative checks below would divide by roundoff
    anorm = abs(A).max() if A.nnz else 1.0
    if np.linalg.norm(b) <= 1e-13 * anorm * np.sqrt(b.shape[0]):
        return FieldVector(np.zeros(b.shape[0]), iterations=0, residual=0.0)

    project = None
    basis = None
    if isinstance(con, MeanZeroConstraint):
        basis = con.kernel_basis(b.shape[0])
        bnorm = np.linalg.norm(b)
        comp = max((abs(v @ b) for v in basis), default=0.0)
        rel = comp / bnorm if bnorm > 0 else 0.0
        if rel > 1e-4:
            raise ConsistencyError(
                f"rhs has kernel component {rel:.3e} relative; system inconsistent")
        if rel > 1e-10:
            warnings.warn(f"rhs kernel component {rel:.3e} projected out", stacklevel=2)
        for v in basis:
            b = b - (v @ b) * v
        project = con.projector(b.shape[0])

    n = b.shape[0]
    if n <= dense_limit:
        if basis is not None and basis.shape[0] > 0:
            x = _dense_kernel_solve(A, b, basis)
        else:
            x = np.linalg.solve(A.toarray(), b)
        it = 0
    else:
        x, it, _ = jacobi_pcg(A, b, project=project, tol=tol)
    rnorm = np.linalg.norm(b - A @ x)
    rel = rnorm / (np.linalg.norm(b) or 1.0)
    if rel > max(tol * 50.0, 1e-9):
        raise SolverError(f"constrained solve residual {rel:.3e} exceeds tolerance",
                          residual=rel, iterations=it)
    if isinstance(con, MeanZeroConstraint):
        x = con.normalize_mean(x)
    return FieldVector(x, iterations=it, residual=rel)


# ---------------------------------------------------------------------------
# monolithic time-step solver


@dataclass
class BlockMatrix:
    """Sparse 2-level block matrix with named fields."""

    names: list
    sizes: list
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.index = {nm: i for i, nm in enumerate(self.names)}

    @property
    def n(self):
        return int(self.offsets[-1])

    def set(self, rname, cname, M):
        self.blocks[(self.index[rname], self.index[cname])] = M.tocsr()

    def add(self, rname, cname, M):
        key = (self.index[rname], self.index[cname])
        if key in self.blocks:
            self.blocks[key] = (self.blocks[key] + M).tocsr()
        else:
            self.blocks[key] = M.tocsr()

    def get(self, rname, cname):
        return self.blocks.get((self.index[rname], self.index[cname]))

    def slice(self, name):
        i = self.index[name]
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def tocsr(self):
        k = len(self.names)
        grid = [[self.blocks.get((i, j)) for j in range(k)] for i in range(k)]
        for i in range(k):
            if grid[i][i] is None:
                grid[i][i] = sp.csr_matrix((self.sizes[i], self.sizes[i]))
        return sp.bmat(grid, format="csr")

    def pack(self, parts: dict) -> np.ndarray:
        v = np.zeros(self.n)
        for nm, arr in parts.items():
            v[self.slice(nm)] = arr
        return v

    def unpack(self, v: np.ndarray) -> dict:
        return {nm: v[self.slice(nm)].copy() for nm in self.names}


class MonolithicSolver:
    """Direct or preconditioned-GMRES solver for the coupled step systems.

    The assembled operator is generally nonsymmetric (the homogenized
    momentum/storage couplings are not adjoint to each other), so the Krylov
    fallback is GMRES with a block lower-triangular preconditioner: algebraic
    multigrid on the displacement block, sparse LU (or AMG) on the
    storage-diffusion blocks.
    """

    def __init__(self, bm: BlockMatrix, *, tol=1e-9, dense_limit=5000,
                 direct_limit=120_000, u_coords=None):
        self.bm = bm
        self.tol = tol
        self.A = bm.tocsr()
        n = self.A.shape[0]
        self.n = n
        # repeated back-substitutions make sparse LU the better direct path
        # well below the dense threshold used for one-shot solves
        self.mode = "dense" if n <= min(dense_limit, 1200) else (
            "splu" if n <= direct_limit else "gmres")
        if self.mode == "dense":
            self._lu = scipy.linalg.lu_factor(self.A.toarray())
        elif self.mode == "splu":
            self._lu = spla.splu(self.A.tocsc())
        else:
            self._build_preconditioner(u_coords)

    def _build_preconditioner(self, u_coords):
        import pyamg

        bm = self.bm
        self._block_solvers = []
        for i, nm in enumerate(bm.names):
            D = bm.blocks.get((i, i))
            size = bm.sizes[i]
            if nm == "u" and size > 0:
                if u_coords is None:
                    raise SolverError("GMRES path needs node coordinates for the "
                                      "displacement AMG hierarchy")
                B = _rigid_modes(u_coords)
                ml = pyamg.smoothed_aggregation_solver(D.tocsr(), B=B, max_coarse=300)
                op = ml.aspreconditioner(cycle="V")
                self._block_solvers.append(lambda r, op=op: op @ r)
            elif size > 0:
                if size <= 150_000:
                    lu = spla.splu(D.tocsc())
                    self._block_solvers.append(lambda r, lu=lu: lu.solve(r))
                else:
                    ml = pyamg.smoothed_aggregation_solver(D.tocsr(), max_coarse=300)
                    op = ml.aspreconditioner(cycle="V")
                    self._block_solvers.append(lambda r, op=op: op @ r)
            else:
                self._block_solvers.append(lambda r: r)

        def sweep(r):
            r = np.asarray(r, dtype=float)
            z = np.zeros_like(r)
            for i, nm in enumerate(bm.names):
                sl = slice(int(bm.offsets[i]), int(bm.offsets[i + 1]))
                ri = r[sl].copy()
                for j in range(i):
                    Cij = bm.blocks.get((i, j))
                    if Cij is not None:
                        slj = slice(int(bm.offsets[j]), int(bm.offsets[j + 1]))
                        ri -= Cij @ z[slj]
                z[sl] = self._block_solvers[i](ri)
            return z

        self._precond = spla.LinearOperator(self.A.shape, matvec=sweep)

    def solve(self, b: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        if self.mode == "dense":
            x = scipy.linalg.lu_solve(self._lu, b)
        elif self.mode == "splu":
            x = self._lu.solve(b)
        else:
            x, info = spla.gmres(self.A, b, x0=x0, M=self._precond,
                                 rtol=self.tol * 0.1, atol=0.0,
                                 restart=100, maxiter=40)
            if info != 0:
                res = np.linalg.norm(b - self.A @ x) / bnorm
                raise SolverError(f"GMRES stalled (info={info}), relative residual "
                                  f"{res:.3e}", residual=res)
        rel = np.linalg.norm(b - self.A @ x) / bnorm
        if rel > self.tol:
            raise SolverError(f"monolithic step residual {rel:.3e} exceeds "
                              f"tolerance {self.tol:.1e}", residual=rel)
        return x


def _rigid_modes(coords: np.ndarray) -> np.ndarray:
    """Rigid-body modes (3 translations, 3 rotations) for AMG near-nullspace."""
    m = coords.shape[0]
    B = np.zeros((3 * m, 6))
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    B[0::3, 0] = 1.0
    B[1::3, 1] = 1.0
    B[2::3, 2] = 1.0
    B[1::3, 3] = -z
    B[2::3, 3] = y
    B[0::3, 4] = z
    B[2::3, 4] = -x
    B[0::3, 5] = y
    B[1::3, 5] = -x
    q, _ = np.linalg.qr(B)
    return q
