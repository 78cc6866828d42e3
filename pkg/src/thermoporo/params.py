"""Material parameters, interface/volume profiles and the run configuration.

All quantities are SI. The two solid/fluid components are labeled 1 (matrix,
connected, carries the boundary conditions) and 2 (inclusions). Interface
barrier coefficients zeta (hydraulic) and omega (thermal) live on the contact
surface and may vary over the periodicity cell; they are entered either as
positive constants or as small named analytic profiles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .errors import ConfigError, MaterialError, WellPosednessError


@dataclass(frozen=True)
class PhaseParams:
    """Isotropic per-phase constants.

    lam, mu      Lame moduli of the skeleton [Pa]
    beta         pressure-stress coupling (Biot) coefficient [-]
    gamma        thermal stress coefficient [Pa/K, scaled]
    alpha        pressure-temperature storage coupling [1/K-ish, scaled]
    phi          storativity (porosity times fluid compressibility) [1/Pa]
    kappa        hydraulic mobility (permeability over viscosity) [m^2/Pa/s]
    lam_hat      thermal conductivity divided by reference temperature
    c            volumetric heat capacity over reference temperature
    """

    lam: float
    mu: float
    beta: float
    gamma: float
    alpha: float
    phi: float
    kappa: float
    lam_hat: float
    c: float

    def validate(self, name: str = "phase") -> None:
        for key in ("lam", "mu", "phi", "kappa", "lam_hat", "c"):
            if not getattr(self, key) > 0.0:
                raise MaterialError(f"{name}.{key} must be positive, got {getattr(self, key)!r}")
        for key in ("beta", "gamma", "alpha"):
            if getattr(self, key) < 0.0:
                raise MaterialError(f"{name}.{key} must be nonnegative, got {getattr(self, key)!r}")
        # Storage matrix [[phi, alpha], [alpha, c]] must be positive definite.
        if not self.phi * self.c > self.alpha**2:
            raise WellPosednessError(
                f"{name}: storage positivity phi*c > alpha^2 violated "
                f"({self.phi}*{self.c} <= {self.alpha}^2)"
            )

    def voigt(self) -> np.ndarray:
        """6x6 stiffness in tensor Voigt storage (raw a_ijkl entries)."""
        return isotropic_voigt(self.lam, self.mu)


def isotropic_voigt(lam: float, mu: float) -> np.ndarray:
    V = np.zeros((6, 6))
    V[:3, :3] = lam
    V[0, 0] = V[1, 1] = V[2, 2] = lam + 2.0 * mu
    V[3, 3] = V[4, 4] = V[5, 5] = mu
    return V


class Profile:
    """Scalar field on the unit cell: constant, affine or sinusoidal.

    evaluate() takes points y with shape (m, 3) in the unit cell and returns
    (m,) values. Serializes to/from plain JSON dicts (a bare number means a
    constant profile).
    """

    def __init__(self, kind: str, **kw):
        self.kind = kind
        self.kw = dict(kw)
        if kind == "constant":
            self._fn = lambda y: np.full(y.shape[0], float(kw["value"]))
        elif kind == "affine":
            c0 = float(kw["c0"])
            grad = np.asarray(kw["grad"], dtype=float).reshape(3)
            self._fn = lambda y: c0 + y @ grad
        elif kind == "sine":
            # c0 + amp * sin(2*pi*(wavevec . y + phase))
            c0 = float(kw["c0"])
            amp = float(kw["amp"])
            wav = np.asarray(kw["wavevec"], dtype=float).reshape(3)
            ph = float(kw.get("phase", 0.0))
            self._fn = lambda y: c0 + amp * np.sin(2.0 * math.pi * (y @ wav + ph))
        else:
            raise ConfigError(f"unknown profile kind {kind!r}")

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return self._fn(y.reshape(1, 3))[0]
        return self._fn(y)

    def lower_bound(self) -> float:
        if self.kind == "constant":
            return self.kw["value"]
        if self.kind == "affine":
            c0, grad = self.kw["c0"], np.asarray(self.kw["grad"], float)
            # bound over the closed unit cell
            return c0 + np.minimum(grad, 0.0).sum()
        if self.kind == "sine":
            return self.kw["c0"] - abs(self.kw["amp"])
        raise ConfigError(self.kind)

    def to_json(self):
        if self.kind == "constant":
            return self.kw["value"]
        d = {"type": self.kind}
        d.update(self.kw)
        return d

    @staticmethod
    def from_json(obj) -> "Profile":
        if isinstance(obj, (int, float)):
            return Profile("constant", value=float(obj))
        if not isinstance(obj, dict) or "type" not in obj:
            raise ConfigError(f"profile must be a number or a dict with 'type': {obj!r}")
        kw = {k: v for k, v in obj.items() if k != "type"}
        return Profile(obj["type"], **kw)


@dataclass
class TwoPhaseMaterial:
    phase1: PhaseParams
    phase2: PhaseParams
    zeta: Profile
    omega: Profile
    insulated_override: bool = False

    def validate(self) -> None:
        self.phase1.validate("phase1")
        self.phase2.validate("phase2")
        for nm, prof in (("zeta", self.zeta), ("omega", self.omega)):
            lb = prof.lower_bound()
            if self.insulated_override:
                if lb < 0.0:
                    raise MaterialError(f"{nm} must be nonnegative, lower bound {lb}")
            elif not lb > 0.0:
                raise MaterialError(
                    f"{nm} must be bounded below by a positive constant (lower bound {lb}); "
                    "set interface.insulated_override to allow zero"
                )

    def phase(self, m: int) -> PhaseParams:
        if m == 1:
            return self.phase1
        if m == 2:
            return self.phase2
        raise ValueError(m)

    def swapped(self) -> "TwoPhaseMaterial":
        return TwoPhaseMaterial(self.phase2, self.phase1, self.zeta, self.omega,
                                self.insulated_override)


def _phase_from_json(d: dict, name: str) -> PhaseParams:
    want = {"lam", "mu", "beta", "gamma", "alpha", "phi", "kappa", "lam_hat", "c"}
    missing = want - set(d)
    if missing:
        raise ConfigError(f"{name}: missing keys {sorted(missing)}")
    extra = set(d) - want
    if extra:
        raise ConfigError(f"{name}: unknown keys {sorted(extra)}")
    return PhaseParams(**{k: float(v) for k, v in d.items()})


@dataclass
class SourceSpec:
    """Constant volumetric sources per phase (momentum f_m, fluid g_m, heat h_m).

    Each phase has its own constant; the upscaled macro sources are the
    cell-volume weighted combinations. Entries may also be 3-vectors (f) or
    scalars (g, h).
    """

    f1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g1: float = 0.0
    g2: float = 0.0
    h1: float = 0.0
    h2: float = 0.0

    @staticmethod
    def from_json(d: dict) -> "SourceSpec":
        s = SourceSpec()
        for k, v in d.items():
            if k in ("f1", "f2"):
                arr = np.asarray(v, dtype=float).reshape(3)
                setattr(s, k, arr)
            elif k in ("g1", "g2", "h1", "h2"):
                setattr(s, k, float(v))
            else:
                raise ConfigError(f"sources: unknown key {k!r}")
        return s

    def to_json(self):
        return {"f1": self.f1.tolist(), "f2": self.f2.tolist(),
                "g1": self.g1, "g2": self.g2, "h1": self.h1, "h2": self.h2}


@dataclass
class SolverOptions:
    tol_cell: float = 1e-10
    tol_step: float = 1e-9
    dense_limit: int = 5000
    direct_limit: int = 120_000
    desk_cap: int = 1_000_000
    override_desk_cap: bool = False
    sequential: bool = False
    threads: int = 1

    @staticmethod
    def from_json(d: dict) -> "SolverOptions":
        opts = SolverOptions()
        for k, v in d.items():
            if not hasattr(opts, k):
                raise ConfigError(f"solver: unknown key {k!r}")
            setattr(opts, k, type(getattr(opts, k))(v))
        return opts


@dataclass
class RunConfig:
    """Single JSON document describing geometry, material, sources and runs."""

    geometry: dict
    material: TwoPhaseMaterial
    sources: SourceSpec
    dt: float = 0.05
    t_end: float = 0.2
    macro_resolution: int = 8
    eps_list: tuple = (0.5, 0.25)
    cell_resolution: int | None = None   # corrector mesh; defaults to geometry resolution
    initial: dict | None = None          # optional nonzero initial fields (constants)
    solver: SolverOptions = field(default_factory=SolverOptions)
    output: dict = field(default_factory=lambda: {"vtk": True})

    def validate(self) -> None:
        self.material.validate()
        if not self.dt > 0.0:
            raise ConfigError(f"time.dt must be positive, got {self.dt}")
        if not self.t_end >= self.dt:
            raise ConfigError(f"time.t_end must be at least dt, got {self.t_end}")
        if self.macro_resolution < 2:
            raise ConfigError("macro.resolution must be at least 2")
        for eps in self.eps_list:
            if not eps > 0.0:
                raise ConfigError(f"eps must be positive, got {eps}")
            k = 1.0 / eps
            if abs(k - round(k)) > 1e-9:
                raise ConfigError(f"eps must be an inverse integer, got {eps}")

    @staticmethod
    def from_json_dict(doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        try:
            geometry = dict(doc["geometry"])
            phases = doc["phases"]
            p1 = _phase_from_json(phases["1"], "phases.1")
            p2 = _phase_from_json(phases["2"], "phases.2")
        except KeyError as e:
            raise ConfigError(f"config missing required section {e}") from e
        iface = doc.get("interface", {})
        material = TwoPhaseMaterial(
            p1, p2,
            zeta=Profile.from_json(iface.get("zeta", 1.0)),
            omega=Profile.from_json(iface.get("omega", 1.0)),
            insulated_override=bool(iface.get("insulated_override", False)),
        )
        cfg = RunConfig(
            geometry=geometry,
            material=material,
            sources=SourceSpec.from_json(doc.get("sources", {})),
        )
        time = doc.get("time", {})
        cfg.dt = float(time.get("dt", cfg.dt))
        cfg.t_end = float(time.get("t_end", cfg.t_end))
        macro = doc.get("macro", {})
        cfg.macro_resolution = int(macro.get("resolution", cfg.macro_resolution))
        dns = doc.get("dns", {})
        cfg.eps_list = tuple(float(e) for e in dns.get("eps_list", cfg.eps_list))
        if dns.get("cell_resolution") is not None:
            cfg.cell_resolution = int(dns["cell_resolution"])
        if "initial" in doc and doc["initial"] is not None:
            cfg.initial = dict(doc["initial"])
        cfg.solver = SolverOptions.from_json(doc.get("solver", {}))
        cfg.output = dict(doc.get("output", {"vtk": True}))
        cfg.validate()
        return cfg

    @staticmethod
    def from_json_file(path) -> "RunConfig":
        try:
            with open(path, "r") as fh:
                doc = json.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        return RunConfig.from_json_dict(doc)

    def to_json_dict(self) -> dict:
        return {
            "geometry": self.geometry,
            "phases": {"1": asdict(self.material.phase1), "2": asdict(self.material.phase2)},
            "interface": {
                "zeta": self.material.zeta.to_json(),
                "omega": self.material.omega.to_json(),
                "insulated_override": self.material.insulated_override,
            },
            "sources": self.sources.to_json(),
            "time": {"dt": self.dt, "t_end": self.t_end},
            "macro": {"resolution": self.macro_resolution},
            "dns": {"eps_list": list(self.eps_list), "cell_resolution": self.cell_resolution},
            "initial": self.initial,
            "solver": asdict(self.solver),
            "output": self.output,
        }
