"""Problem definition: grid mesh, materials, algorithm parameters and design state."""
from __future__ import annotations

import copy
import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .elasticity import ThermodynamicStabilityError
from .orientation import FREE_Q_2D, Q_LOWER, Q_UPPER


class ConfigError(ValueError):
    """Invalid or unparsable problem document."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass
class Mesh:
    """Regular grid of unit-aspect bilinear quads (dim 2) or trilinear hexes (dim 3).

    Nodes are numbered x-fastest, then y, then z; elements likewise.  Each
    node carries ``dim`` displacement DOFs, ``dof = dim * node + axis``.
    """

    dim: int
    nelx: int
    nely: int
    nelz: int = 0
    element_size: float = 1.0
    fixed_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    load_cases: list = field(default_factory=list)
    domain_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3", "mesh.dim")
        if self.nelx < 1 or self.nely < 1:
            raise ConfigError("element counts must be >= 1", "mesh.nelx")
        if (self.dim == 3) != (self.nelz >= 1):
            raise ConfigError("nelz >= 1 exactly when dim == 3", "mesh.nelz")
        if self.element_size <= 0:
            raise ConfigError("element size must be positive", "mesh.element_size")
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=int))
        self.load_cases = [{int(k): float(v) for k, v in lc.items()} for lc in self.load_cases]
        if self.domain_mask is None:
            self.domain_mask = np.ones(self.n_elements, dtype=bool)
        self.domain_mask = np.asarray(self.domain_mask, dtype=bool).ravel()
        if self.domain_mask.size != self.n_elements:
            raise ConfigError("mask size does not match the grid", "mesh.domain_mask")
        ndof = self.n_dofs
        if self.fixed_dofs.size and (self.fixed_dofs.min() < 0 or self.fixed_dofs.max() >= ndof):
            raise ConfigError("fixed DOF outside the grid", "mesh.fixed_dofs")
        for lc in self.load_cases:
            if any(d < 0 or d >= ndof for d in lc):
                raise ConfigError("loaded DOF outside the grid", "mesh.load_cases")
        if self.V0 <= 0:
            raise ConfigError("design domain has no active elements", "mesh.domain_mask")

    @property
    def shape(self) -> tuple[int, ...]:
        """Element-array shape, slowest axis first."""
        if self.dim == 2:
            return (self.nely, self.nelx)
        return (self.nelz, self.nely, self.nelx)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.shape)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_dofs(self) -> int:
        return self.dim * self.n_nodes

    @property
    def element_volume(self) -> float:
        return self.element_size**self.dim

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.domain_mask)

    @property
    def V0(self) -> float:
        return self.element_volume * int(self.domain_mask.sum())

    def node(self, ix: int, iy: int, iz: int = 0) -> int:
        return (iz * (self.nely + 1) + iy) * (self.nelx + 1) + ix

    def force_vector(self, case: int) -> np.ndarray:
        f = np.zeros(self.n_dofs)
        for dof, value in self.load_cases[case].items():
            f[dof] += value
        return f

    def to_dict(self) -> dict:
        return {
            "dim": self.dim, "nelx": self.nelx, "nely": self.nely, "nelz": self.nelz,
            "element_size": self.element_size,
            "fixed_dofs": self.fixed_dofs.tolist(),
            "load_cases": [{str(k): v for k, v in sorted(lc.items())} for lc in self.load_cases],
            "domain_mask": self.domain_mask.astype(int).tolist(),
        }


@dataclass(frozen=True)
class MaterialSpec:
    """Transversely isotropic constants; axis 1 is the build direction."""

    E1: float = 2.0
    E2: float = 10.0
    nu21: float = 0.3
    nu23: float = 0.3
    G12: float = 3.85

    def __post_init__(self):
        for name in ("E1", "E2", "G12"):
            if getattr(self, name) <= 0:
                raise ConfigError("moduli must be positive", f"material.{name}")
        eig = np.linalg.eigvalsh(self.compliance())
        if eig.min() <= 0:
            raise ThermodynamicStabilityError(
                f"material constants give an indefinite compliance (min eigenvalue {eig.min():.3g})")
        if self.E1 >= self.E2:
            warnings.warn("E1 >= E2: build direction is not the weak axis", UserWarning, stacklevel=3)

    def compliance(self) -> np.ndarray:
        """6x6 Voigt compliance; ``nu21`` couples strain along 1 to stress along 2."""
        E1, E2 = self.E1, self.E2
        s = np.zeros((6, 6))
        s[0, 0] = 1.0 / E1
        s[1, 1] = s[2, 2] = 1.0 / E2
        s[0, 1] = s[1, 0] = s[0, 2] = s[2, 0] = -self.nu21 / E2
        s[1, 2] = s[2, 1] = -self.nu23 / E2
        s[3, 3] = 2.0 * (1.0 + self.nu23) / E2
        s[4, 4] = s[5, 5] = 1.0 / self.G12
        return s


@dataclass(frozen=True)
class JointSpec:
    Ej: float = 1.0
    nu_j: float = 0.3

    def __post_init__(self):
        if self.Ej <= 0:
            raise ConfigError("joint modulus must be positive", "joint.Ej")
        if not 0.0 <= self.nu_j < 0.5:
            raise ConfigError("joint Poisson ratio must lie in [0, 0.5)", "joint.nu_j")


@dataclass(frozen=True)
class OptimizationConfig:
    K: int = 2
    simp_p: float = 3.0
    vol_limit: float = 0.35
    sigma_bar: float = 1000.0
    eps_bar: float = 0.01
    filter_radius: float | None = None  # None -> 2.5 element sizes
    beta_start: float = 8.0
    beta_factor: float = 2.0
    beta_period: int = 50
    beta_max: float = 64.0
    eta: float = 0.5
    eta_interface: float = 0.1
    beta_interface_max: float = 32.0
    beta_stress: float = 16.0
    relax_q: float = 0.5
    rho_min: float = 1e-6
    max_iter: int = 400
    obj_tol: float = 1e-4
    obj_tol_window: int = 5
    n_starts: int = 5
    rng_seed: int = 0
    stress_start: int | None = None  # None -> once beta reaches beta_max
    move_rho: float = 0.2
    move_q: float = 0.1
    move_decay: float = 1.0  # move limits scale with (beta_start / beta) ** move_decay
    asy_min: float = 0.01  # closest MMA asymptote, fraction of the variable range
    asy_min_q: float = 0.001  # same for orientation variables, which the projection amplifies
    interface_phase: str = "weights"  # or "memberships"

    def __post_init__(self):
        checks = [
            ("K", self.K >= 1, "must be >= 1"),
            ("simp_p", self.simp_p >= 1, "must be >= 1"),
            ("vol_limit", 0.0 < self.vol_limit < 1.0, "must lie in (0, 1)"),
            ("sigma_bar", self.sigma_bar > 0, "must be positive"),
            ("eps_bar", self.eps_bar > 0, "must be positive"),
            ("beta_start", self.beta_start > 0, "must be positive"),
            ("beta_max", self.beta_max >= self.beta_start, "must be >= beta_start"),
            ("eta", 0.0 < self.eta < 1.0, "must lie in (0, 1)"),
            ("relax_q", 0.0 < self.relax_q < self.simp_p, "must lie in (0, simp_p)"),
            ("max_iter", self.max_iter >= 1, "must be >= 1"),
            ("n_starts", self.n_starts >= 1, "must be >= 1"),
            ("filter_radius", self.filter_radius is None or self.filter_radius >= 0, "must be >= 0"),
            ("asy_min", 0.0 < self.asy_min < 0.5, "must lie in (0, 0.5)"),
            ("asy_min_q", 0.0 < self.asy_min_q < 0.5, "must lie in (0, 0.5)"),
            ("move_decay", self.move_decay >= 0, "must be >= 0"),
            ("stress_start", self.stress_start is None or self.stress_start >= 0, "must be >= 0"),
            ("interface_phase", self.interface_phase in ("weights", "memberships"),
             "must be 'weights' or 'memberships'"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(msg, f"optimization.{key}")

    def radius(self, mesh: Mesh) -> float:
        return 2.5 * mesh.element_size if self.filter_radius is None else self.filter_radius


class Problem(NamedTuple):
    mesh: Mesh
    material: MaterialSpec
    joint: JointSpec
    config: OptimizationConfig


@dataclass
class DesignState:
    """Raw design fields; masked elements hold zeros."""

    rho: np.ndarray
    memberships: np.ndarray
    orientation_vars: np.ndarray

    def copy(self) -> "DesignState":
        return DesignState(self.rho.copy(), self.memberships.copy(), self.orientation_vars.copy())

    def clamp(self, mesh: Mesh) -> None:
        np.clip(self.rho, 0.0, 1.0, out=self.rho)
        np.clip(self.memberships, 0.0, 1.0, out=self.memberships)
        np.clip(self.orientation_vars, Q_LOWER, Q_UPPER, out=self.orientation_vars)
        self.rho[~mesh.domain_mask] = 0.0
        self.memberships[~mesh.domain_mask] = 0.0

    def check(self, mesh: Mesh, K: int) -> None:
        if self.rho.shape != (mesh.n_elements,) or self.memberships.shape != (mesh.n_elements, K):
            raise ValueError("design arrays do not match the mesh")
        if self.orientation_vars.shape != (K, 6):
            raise ValueError("orientation variables must have shape (K, 6)")

    def to_dict(self) -> dict:
        return {"rho": self.rho.tolist(), "memberships": self.memberships.tolist(),
                "orientation_vars": self.orientation_vars.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignState":
        return cls(np.asarray(d["rho"], dtype=float), np.asarray(d["memberships"], dtype=float),
                   np.asarray(d["orientation_vars"], dtype=float))


def fixed_orientation_values(dim: int) -> dict[int, float]:
    """Orientation slots pinned in plane problems (q22 = 1, q33 = q13 = q23 = 0)."""
    if dim == 3:
        return {}
    return {1: 1.0, 2: 0.0, 4: 0.0, 5: 0.0}


def free_orientation_slots(dim: int) -> tuple[int, ...]:
    return tuple(range(6)) if dim == 3 else FREE_Q_2D


def initialize_state(mesh: Mesh, config: OptimizationConfig, seed: int) -> DesignState:
    ne, K = mesh.n_elements, config.K
    rho = np.where(mesh.domain_mask, config.vol_limit, 0.0)
    m = np.where(mesh.domain_mask[:, None], 1.0 / K, 0.0) * np.ones((ne, K))
    rng = np.random.default_rng(seed)
    q = rng.uniform(Q_LOWER, Q_UPPER, size=(K, 6))
    for slot, value in fixed_orientation_values(mesh.dim).items():
        q[:, slot] = value
    return DesignState(rho, m, q)


_SECTIONS = {"material": MaterialSpec, "joint": JointSpec, "optimization": OptimizationConfig}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_document(doc) -> dict:
    """Parse a config document and fold in any preset it names."""
    from .presets import PRESETS, preset_document, unknown_preset

    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("document must be a JSON object")
    name = doc.get("preset") or doc.get("mesh", {}).get("preset")
    if name is None:
        return copy.deepcopy(doc)
    if name not in PRESETS:
        raise unknown_preset(name)
    mesh_args = {k: v for k, v in doc.get("mesh", {}).items() if k != "preset"}
    base = preset_document(name, **mesh_args)
    rest = {k: v for k, v in doc.items() if k not in ("mesh", "preset")}
    return _merge(base, rest)


def _mesh_from_section(sec: dict) -> Mesh:
    required = ("dim", "nelx", "nely")
    for key in required:
        if key not in sec:
            raise ConfigError("missing required key", f"mesh.{key}")
    known = {f.name for f in fields(Mesh)} | {"void_boxes"}
    for key in sec:
        if key not in known:
            raise ConfigError("unknown key", f"mesh.{key}")
    args = {k: v for k, v in sec.items() if k != "void_boxes"}
    if "void_boxes" in sec:
        dim = sec["dim"]
        shape = (sec["nely"], sec["nelx"]) if dim == 2 else (sec["nelz"], sec["nely"], sec["nelx"])
        mask = np.ones(shape, dtype=bool)
        for box in sec["void_boxes"]:
            # box = [x0, x1, y0, y1(, z0, z1)] in element indices, half-open
            sl = [slice(box[2 * a], box[2 * a + 1]) for a in range(dim)][::-1]
            mask[tuple(sl)] = False
        args["domain_mask"] = mask.ravel()
    try:
        return Mesh(**args)
    except TypeError as exc:
        raise ConfigError(str(exc), "mesh") from exc


def build_problem(doc) -> Problem:
    """Validated problem from a JSON document (string or dict); preset names are expanded."""
    doc = resolve_document(doc)
    if "mesh" not in doc:
        raise ConfigError("missing required section", "mesh")
    for key in doc:
        if key not in (*_SECTIONS, "mesh", "output"):
            raise ConfigError("unknown section", key)
    mesh = _mesh_from_section(doc["mesh"])
    parts = {}
    for name, cls in _SECTIONS.items():
        sec = doc.get(name, {}) or {}
        known = {f.name for f in fields(cls)}
        for key in sec:
            if key not in known:
                raise ConfigError("unknown key", f"{name}.{key}")
        try:
            parts[name] = cls(**sec)
        except TypeError as exc:
            raise ConfigError(str(exc), name) from exc
    return Problem(mesh, parts["material"], parts["joint"], parts["optimization"])


def problem_document(problem: Problem) -> dict:
    """Fully expanded document; feeding it back to ``build_problem`` reproduces the problem."""
    return {
        "mesh": problem.mesh.to_dict(),
        "material": asdict(problem.material),
        "joint": asdict(problem.joint),
        "optimization": asdict(problem.config),
    }
