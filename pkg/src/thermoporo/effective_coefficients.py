"""Homogenized coefficients assembled from the cell correctors.

Conventions: 4-tensors are stored as 6x6 arrays of raw tensor entries in
Voigt pair order [(0,0),(1,1),(2,2),(1,2),(0,2),(0,1)]; contraction with a
symmetric 3x3 argument uses the multiplicity weights diag(1,1,1,2,2,2), so
(T : e)_row = T @ (W e_voigt). The identity 4-tensor in this storage is
diag(1,1,1,1/2,1/2,1/2).

The elasticity tensor is assembled along two independent routes (energy
quadratic form and direct stress average); their disagreement is a solver
consistency indicator and is recorded in `gates`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import fem_core as fc
from .cell_problems import CellCorrectors, solve_cell_problems
from .errors import ConsistencyError
from .params import SolverOptions, TwoPhaseMaterial
from .unit_cell import UnitCellMesh

ID_SYM6 = np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])


def tensor_to_voigt(T: np.ndarray) -> np.ndarray:
    """Raw Voigt entries of a symmetric 3x3 tensor."""
    return np.array([T[r, s] for (r, s) in fc.VOIGT])


def voigt_to_tensor(v: np.ndarray) -> np.ndarray:
    T = np.empty((3, 3))
    for m, (r, s) in enumerate(fc.VOIGT):
        T[r, s] = v[m]
        T[s, r] = v[m]
    return T


@dataclass
class EffectiveCoefficients:
    A_hom: np.ndarray                 # (6,6) raw entries
    A_hom_direct: np.ndarray          # (6,6) raw entries, stress-average route
    B: dict                           # m -> (3,3) momentum/pressure coupling
    D: dict                           # m -> (3,3) momentum/temperature coupling
    C: dict                           # m -> (6,6) phase strain-average tensor
    K: dict                           # m -> (3,3) pressure mobility
    L: dict                           # m -> (3,3) heat conductivity
    beta: dict                        # m -> float
    gamma: dict                       # m -> float
    phi_star: dict                    # m -> float
    alpha_star: dict                  # m -> float
    c_star: dict                      # m -> float
    zeta_star: float
    omega_star: float
    volumes: dict                     # m -> |Y_m|
    interface_area: float
    resolution: int
    cell_flux_reading: str
    geometry_name: str = ""
    gates: dict = field(default_factory=dict)

    def storage_trace(self, m: int) -> np.ndarray:
        """Raw Voigt entries of tr(C_m . ), i.e. the 3x3 tensor contracting
        e(u) in the storage terms: sum_i (C_m)_{ii,kl}."""
        return self.C[m][:3, :].sum(axis=0)

    def stress(self, strain_voigt: np.ndarray, p: np.ndarray,
               th: np.ndarray) -> np.ndarray:
        """Homogenized stress (raw Voigt) for a macroscopic strain and the
        phase pressures p = (p1, p2) and temperatures th = (th1, th2)."""
        s = self.A_hom @ (fc.VOIGT_WEIGHTS * np.asarray(strain_voigt, float))
        for m in (1, 2):
            s = s - tensor_to_voigt(self.B[m]) * p[m - 1]
            s = s - tensor_to_voigt(self.D[m]) * th[m - 1]
        return s

    def to_json_dict(self) -> dict:
        d = {
            "format": "effective-coefficients",
            "version": 1,
            "voigt_order": [list(p) for p in fc.VOIGT],
            "A_hom": self.A_hom.tolist(),
            "A_hom_direct": self.A_hom_direct.tolist(),
            "zeta_star": self.zeta_star,
            "omega_star": self.omega_star,
            "interface_area": self.interface_area,
            "resolution": self.resolution,
            "cell_flux_reading": self.cell_flux_reading,
            "geometry_name": self.geometry_name,
            "gates": {k: float(v) for k, v in self.gates.items()},
        }
        for m in (1, 2):
            d[f"B{m}"] = self.B[m].tolist()
            d[f"D{m}"] = self.D[m].tolist()
            d[f"C{m}"] = self.C[m].tolist()
            d[f"K{m}"] = self.K[m].tolist()
            d[f"L{m}"] = self.L[m].tolist()
            d[f"beta{m}"] = self.beta[m]
            d[f"gamma{m}"] = self.gamma[m]
            d[f"phi{m}_star"] = self.phi_star[m]
            d[f"alpha{m}_star"] = self.alpha_star[m]
            d[f"c{m}_star"] = self.c_star[m]
            d[f"volume_Y{m}"] = self.volumes[m]
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "EffectiveCoefficients":
        if d.get("format") != "effective-coefficients":
            raise ConsistencyError("not an effective-coefficients document")
        kw = dict(
            A_hom=np.array(d["A_hom"]),
            A_hom_direct=np.array(d.get("A_hom_direct", d["A_hom"])),
            B={m: np.array(d[f"B{m}"]) for m in (1, 2)},
            D={m: np.array(d[f"D{m}"]) for m in (1, 2)},
            C={m: np.array(d[f"C{m}"]) for m in (1, 2)},
            K={m: np.array(d[f"K{m}"]) for m in (1, 2)},
            L={m: np.array(d[f"L{m}"]) for m in (1, 2)},
            beta={m: float(d[f"beta{m}"]) for m in (1, 2)},
            gamma={m: float(d[f"gamma{m}"]) for m in (1, 2)},
            phi_star={m: float(d[f"phi{m}_star"]) for m in (1, 2)},
            alpha_star={m: float(d[f"alpha{m}_star"]) for m in (1, 2)},
            c_star={m: float(d[f"c{m}_star"]) for m in (1, 2)},
            zeta_star=float(d["zeta_star"]),
            omega_star=float(d["omega_star"]),
            volumes={m: float(d[f"volume_Y{m}"]) for m in (1, 2)},
            interface_area=float(d["interface_area"]),
            resolution=int(d["resolution"]),
            cell_flux_reading=d["cell_flux_reading"],
            geometry_name=d.get("geometry_name", ""),
            gates=d.get("gates", {}),
        )
        return cls(**kw)

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load_json(cls, path) -> "EffectiveCoefficients":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))

    def save_csv(self, path):
        """Flat long-format table: coefficient, indices, value."""
        rows = []
        for nm, arr in (("A_hom", self.A_hom), ("A_hom_direct", self.A_hom_direct)):
            for i in range(6):
                for j in range(6):
                    rows.append((nm, i, j, arr[i, j]))
        for m in (1, 2):
            for nm, arr in ((f"B{m}", self.B[m]), (f"D{m}", self.D[m]),
                            (f"K{m}", self.K[m]), (f"L{m}", self.L[m])):
                for i in range(3):
                    for j in range(3):
                        rows.append((nm, i, j, arr[i, j]))
            for i in range(6):
                for j in range(6):
                    rows.append((f"C{m}", i, j, self.C[m][i, j]))
            rows.append((f"beta{m}", -1, -1, self.beta[m]))
            rows.append((f"gamma{m}", -1, -1, self.gamma[m]))
            rows.append((f"phi{m}_star", -1, -1, self.phi_star[m]))
            rows.append((f"alpha{m}_star", -1, -1, self.alpha_star[m]))
            rows.append((f"c{m}_star", -1, -1, self.c_star[m]))
            rows.append((f"volume_Y{m}", -1, -1, self.volumes[m]))
        rows.append(("zeta_star", -1, -1, self.zeta_star))
        rows.append(("omega_star", -1, -1, self.omega_star))
        rows.append(("interface_area", -1, -1, self.interface_area))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["coefficient", "i", "j", "value"])
            for nm, i, j, v in rows:
                w.writerow([nm, i, j, f"{v:.16e}"])


def _symmetry_defect(M: np.ndarray) -> float:
    scale = np.abs(M).max() or 1.0
    return float(np.abs(M - M.T).max() / scale)


def compute_effective(correctors: CellCorrectors) -> EffectiveCoefficients:
    """Assemble all homogenized coefficients from solved correctors."""
    mesh = correctors.mesh
    mat = correctors.material
    vols = {m: mesh.volume(m) for m in (1, 2)}

    # elasticity, energy route
    A_e = np.empty((6, 6))
    loads = correctors.prestress_loads
    w = correctors.w
    K = correctors.K_elastic
    A_raw = {m: mat.phase(m).voigt() for m in (1, 2)}
    base = vols[1] * A_raw[1] + vols[2] * A_raw[2]
    Kw = np.array([K @ w[kl] for kl in range(6)])
    for kl in range(6):
        for mn in range(kl, 6):
            val = base[kl, mn] + loads[kl] @ w[mn] + loads[mn] @ w[kl] \
                + w[kl] @ Kw[mn]
            A_e[kl, mn] = val
            A_e[mn, kl] = val

    # elasticity, direct stress-average route
    S = {m: correctors.strain_integrals(m) for m in (1, 2)}
    A_d = np.empty((6, 6))
    for mn in range(6):
        col = np.zeros(6)
        for m in (1, 2):
            col += vols[m] * A_raw[m][:, mn]
            col += A_raw[m] @ (fc.VOIGT_WEIGHTS * S[m][:, mn])
        A_d[:, mn] = col

    gates = {
        "a_hom_energy_vs_direct": float(np.abs(A_e - A_d).max()),
        "a_hom_symmetry_defect": _symmetry_defect(A_d),
    }

    C = {m: vols[m] * ID_SYM6 + S[m] for m in (1, 2)}

    B, D, Kt, Lt = {}, {}, {}, {}
    for m in (1, 2):
        ph = mat.phase(m)
        Gpi = correctors.grad_integrals("pi", m)
        Gth = correctors.grad_integrals("theta", m)
        Kt[m] = ph.kappa * (vols[m] * np.eye(3) + Gpi)
        Lt[m] = ph.lam_hat * (vols[m] * np.eye(3) + Gth)
        B[m] = ph.beta * (vols[m] * np.eye(3) + Gpi)
        D[m] = ph.gamma * (vols[m] * np.eye(3) + Gth)
        gates[f"K{m}_symmetry_defect"] = _symmetry_defect(Kt[m])
        gates[f"L{m}_symmetry_defect"] = _symmetry_defect(Lt[m])
        # transport tensors are symmetric PSD; tiny solver noise is symmetrized
        Kt[m] = 0.5 * (Kt[m] + Kt[m].T)
        Lt[m] = 0.5 * (Lt[m] + Lt[m].T)
        B[m] = 0.5 * (B[m] + B[m].T)
        D[m] = 0.5 * (D[m] + D[m].T)
        ev_k = np.linalg.eigvalsh(Kt[m])
        ev_l = np.linalg.eigvalsh(Lt[m])
        gates[f"K{m}_min_eig"] = float(ev_k.min())
        gates[f"L{m}_min_eig"] = float(ev_l.min())
        if ev_k.min() < -1e-9 * max(ev_k.max(), 1.0):
            raise ConsistencyError(f"pressure mobility K{m} indefinite")
        if ev_l.min() < -1e-9 * max(ev_l.max(), 1.0):
            raise ConsistencyError(f"heat conductivity L{m} indefinite")

    A_sym = 0.5 * (A_d + A_d.T)
    gates["a_hom_min_eig_mandel"] = float(np.linalg.eigvalsh(
        np.diag(np.sqrt(fc.VOIGT_WEIGHTS)) @ A_sym
        @ np.diag(np.sqrt(fc.VOIGT_WEIGHTS))).min())

    zeta_star = mesh.interface.integrate(mat.zeta)
    omega_star = mesh.interface.integrate(mat.omega)

    return EffectiveCoefficients(
        A_hom=A_sym,
        A_hom_direct=A_d,
        B=B, D=D, C=C, K=Kt, L=Lt,
        beta={m: mat.phase(m).beta for m in (1, 2)},
        gamma={m: mat.phase(m).gamma for m in (1, 2)},
        phi_star={m: mat.phase(m).phi * vols[m] for m in (1, 2)},
        alpha_star={m: mat.phase(m).alpha * vols[m] for m in (1, 2)},
        c_star={m: mat.phase(m).c * vols[m] for m in (1, 2)},
        zeta_star=zeta_star,
        omega_star=omega_star,
        volumes=vols,
        interface_area=mesh.interface.area,
        resolution=mesh.resolution,
        cell_flux_reading=correctors.flux_reading,
        geometry_name=mesh.name,
        gates=gates,
    )


def upscale(mesh: UnitCellMesh, material: TwoPhaseMaterial,
            options: SolverOptions = None):
    """Solve the cell problems and assemble coefficients in one call."""
    correctors = solve_cell_problems(mesh, material, options)
    coeffs = compute_effective(correctors)
    return coeffs, correctors
