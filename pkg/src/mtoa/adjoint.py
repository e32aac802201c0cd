"""Forward evaluation of (F, g1, g2) and their adjoint sensitivities.

The forward chain is

    raw rho, m --Helmholtz--> filtered --Heaviside--> rho~, m~
    m~ --DMO--> w,   rho~, w --> interface indicator I
    q^(k) --> a^(k) --> C_r^(k)
    s = rho_min + rho~^P (1 - rho_min)
    C = (1 - I) (s sum_k w_k C_r^(k) + rho_min mean_k C_r^(k)) + I s C_J

and every functional is pulled back through it in reverse order.  Compliance
is self-adjoint; the stress aggregate needs one extra solve per load case.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import constraints as cons
from .elasticity import (joint_tensor, plane_stress_transform, rotate_tensor,
                         rotate_tensor_jacobian, rotation_coefficients,
                         transverse_from_engineering)
from .fem import FEModel, compliance, von_mises, von_mises_matrix
from .fields import (FieldOperators, combined_stiffness, dmo_weights, dmo_weights_vjp,
                     interface_indicator, interface_vjp, simp_scale)
from .model import DesignState, Problem, free_orientation_slots
from .orientation import (HeavisideSpec, heaviside_derivative, orientation_with_jacobian,
                          recover_build_vector)

FUNCTIONALS = ("F", "g1", "g2")


@dataclass
class Schedule:
    """Heaviside sharpness for one evaluation."""

    beta: float
    beta_interface: float
    eta: float = 0.5
    eta_interface: float = 0.1

    @classmethod
    def from_config(cls, config, beta: float | None = None) -> "Schedule":
        beta = config.beta_start if beta is None else beta
        return cls(beta, min(beta, config.beta_interface_max), config.eta, config.eta_interface)

    @property
    def density(self) -> HeavisideSpec:
        return HeavisideSpec(self.beta, self.eta)

    @property
    def interface(self) -> HeavisideSpec:
        return HeavisideSpec(self.beta_interface, self.eta_interface, "shifted")

    @property
    def orientation(self) -> HeavisideSpec:
        return HeavisideSpec(self.beta, 0.0, "symmetric")


@dataclass
class SensitivityBundle:
    dF: DesignState
    dg1: DesignState
    dg2: DesignState

    def __getitem__(self, name: str) -> DesignState:
        return {"F": self.dF, "g1": self.dg1, "g2": self.dg2}[name]


@dataclass
class Evaluation:
    """Everything the forward pass produced; also the adjoint working set."""

    state: DesignState
    schedule: Schedule
    filtered: object
    interface: object
    weights: np.ndarray
    rotated: np.ndarray  # (K, d, d)
    rotated_jac: np.ndarray  # (K, 6, d, d): d C_r / d q
    orientation: np.ndarray  # (K, 6) orientation tensor components
    mix: np.ndarray  # (ne, d, d) sum_k w_k C_r^(k)
    C: np.ndarray
    C_solid: np.ndarray
    system: object
    displacements: list
    stresses: np.ndarray
    von_mises: np.ndarray
    strains: np.ndarray
    F: float
    g1: float
    g2: float
    sensitivities: SensitivityBundle | None = None
    extras: dict = field(default_factory=dict)

    @property
    def values(self) -> dict:
        return {"F": self.F, "g1": self.g1, "g2": self.g2}


class Evaluator:
    """Evaluates the three functionals of a problem and their gradients."""

    def __init__(self, problem: Problem, fe_method: str | None = None):
        self.problem = problem
        mesh, material, joint, config = problem
        self.mesh, self.config = mesh, config
        self.dim = mesh.dim
        self.ops = FieldOperators(mesh, config.radius(mesh))
        self.fe = FEModel(mesh, fe_method)
        self.Ct = transverse_from_engineering(material)
        self.coeffs = rotation_coefficients(self.Ct)
        self.CJ = joint_tensor(joint, self.dim).entries
        self.loads = [mesh.force_vector(c) for c in range(len(mesh.load_cases))]
        self.free_q = free_orientation_slots(self.dim)
        self.V = von_mises_matrix(self.dim)
        self.stress_spec = cons.stress_spec(config.beta_stress)
        self._guesses: dict = {}

    # forward -----------------------------------------------------------
    def rotated_tensors(self, q: np.ndarray, spec: HeavisideSpec):
        K = q.shape[0]
        d = 3 if self.dim == 2 else 6
        Cr = np.zeros((K, d, d))
        dCr = np.zeros((K, 6, d, d))
        avec = np.zeros((K, 6))
        for k in range(K):
            a, jac = orientation_with_jacobian(q[k], spec, self.dim)
            avec[k] = a
            amat = np.array([[a[0], a[3], a[4]], [a[3], a[1], a[5]], [a[4], a[5], a[2]]])
            C6 = rotate_tensor(self.coeffs, amat).entries
            dC6 = rotate_tensor_jacobian(self.coeffs, amat)
            if self.dim == 2:
                T = plane_stress_transform(C6)
                Cr[k] = T @ C6 @ T.T
                dCa = np.einsum("ia,nab,jb->nij", T, dC6, T)
            else:
                Cr[k] = C6
                dCa = dC6
            dCr[k] = np.einsum("nq,nij->qij", jac, dCa)
        return Cr, dCr, avec

    def forward(self, state: DesignState, schedule: Schedule) -> Evaluation:
        mesh, cfg = self.mesh, self.config
        P = cfg.simp_p
        ff = self.ops.filtered_fields(state.rho, state.memberships, P, schedule.density,
                                      cfg.interface_phase)
        intf = interface_indicator(ff, schedule.interface, mesh.element_size)
        w = ff.phase if cfg.interface_phase == "weights" else dmo_weights(ff.m_tilde, P)
        Cr, dCr, avec = self.rotated_tensors(state.orientation_vars, schedule.orientation)
        mix = np.einsum("ek,kab->eab", w, Cr)
        scale = simp_scale(ff.rho_tilde, P, cfg.rho_min)
        C_B = scale[:, None, None] * mix + cfg.rho_min * Cr.mean(axis=0)
        C = combined_stiffness(C_B, self.CJ, intf.I, scale)
        C_solid = combined_stiffness(mix, self.CJ, intf.I)
        system = self.fe.assemble_stiffness(C)
        us = []
        for c, f in enumerate(self.loads):
            u = self.fe.solve(system, f, guess=self._guesses.get(("u", c)))
            self._guesses[("u", c)] = u
            us.append(u)
        F = compliance(us, self.loads)
        sig, vm, eps = von_mises(self.fe, us, C_solid, ff.rho_tilde, cfg.relax_q)
        g1 = cons.volume_constraint(ff.rho_tilde, mesh, cfg.vol_limit)
        g2 = cons.stress_constraint(intf.I, vm, cfg.sigma_bar, cfg.eps_bar, self.stress_spec, mesh)
        return Evaluation(state, schedule, ff, intf, w, Cr, dCr, avec, mix, C, C_solid, system,
                          us, sig, vm, eps, F, g1, g2)

    # reverse -----------------------------------------------------------
    def pullback(self, ev: Evaluation, gC=None, gCs=None, g_rho_t=None, gI=None) -> DesignState:
        """Chain cotangents on (C, C_solid, rho~, I) back to the raw design variables."""
        mesh, cfg = self.mesh, self.config
        P = cfg.simp_p
        ff, intf = ev.filtered, ev.interface
        ne, K = ev.weights.shape
        d = ev.C.shape[1]
        zeros = np.zeros((ne, d, d))
        gC = zeros if gC is None else gC
        gCs = zeros if gCs is None else gCs
        g_rt = np.zeros(ne) if g_rho_t is None else g_rho_t.copy()
        g_I = np.zeros(ne) if gI is None else gI.copy()
        I = intf.I[:, None, None]
        scale = simp_scale(ff.rho_tilde, P, cfg.rho_min)
        C_B = scale[:, None, None] * ev.mix + cfg.rho_min * ev.rotated.mean(axis=0)
        g_I += np.einsum("eab,eab->e", gC, scale[:, None, None] * self.CJ[None] - C_B)
        g_I += np.einsum("eab,eab->e", gCs, self.CJ[None] - ev.mix)
        g_CB = (1.0 - I) * gC
        g_mix = (1.0 - I) * gCs + scale[:, None, None] * g_CB
        g_scale = np.einsum("eab,eab->e", g_CB, ev.mix) + intf.I * np.einsum("eab,ab->e", gC, self.CJ)
        g_rt += g_scale * P * ff.rho_tilde ** (P - 1.0) * (1.0 - cfg.rho_min)
        g_w = np.einsum("eab,kab->ek", g_mix, ev.rotated)
        g_Cr = np.einsum("ek,eab->kab", ev.weights, g_mix)
        g_Cr += (cfg.rho_min / K) * g_CB.sum(axis=0)[None]
        g_q = np.einsum("kqab,kab->kq", ev.rotated_jac, g_Cr)
        fixed = [s for s in range(6) if s not in self.free_q]
        g_q[:, fixed] = 0.0
        g_phase = None
        if np.any(g_I):
            g_r, g_phase = interface_vjp(ff, intf, self.ops.gradients, g_I, P)
            g_rt += g_r
            if self.config.interface_phase == "weights":
                g_w, g_phase = g_w + g_phase, None
        g_mt = dmo_weights_vjp(ff.m_tilde, P, g_w)
        if g_phase is not None:
            g_mt += g_phase
        mask = mesh.domain_mask
        spec = ev.schedule.density
        g_rf = np.where(mask, heaviside_derivative(ff.rho_filtered, spec) * g_rt, 0.0)
        g_mf = np.where(mask[:, None], heaviside_derivative(ff.m_filtered, spec) * g_mt, 0.0)
        g_rho = np.where(mask, self.ops.filter.transpose(g_rf), 0.0)
        g_m = np.where(mask[:, None], self.ops.filter.transpose(g_mf), 0.0)
        return DesignState(g_rho, g_m, g_q)

    def _energy_cotangent(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``d(v^T K u)/dC_e`` per element."""
        cache = self.fe.cache
        eu = cache.gauss_strains(u)
        ev_ = eu if v is u else cache.gauss_strains(v)
        return np.einsum("g,ega,egb->eab", cache.weights, ev_, eu, optimize=True)

    def compliance_sensitivities(self, ev: Evaluation) -> DesignState:
        gC = sum(-0.5 * self._energy_cotangent(u, u) for u in ev.displacements)
        return self.pullback(ev, gC=gC)

    def volume_sensitivities(self, ev: Evaluation) -> DesignState:
        g = np.where(self.mesh.domain_mask, self.mesh.element_volume / self.mesh.V0, 0.0)
        return self.pullback(ev, g_rho_t=g)

    def stress_sensitivities(self, ev: Evaluation) -> DesignState:
        mesh, cfg = self.mesh, self.config
        ne = mesh.n_elements
        v = mesh.element_volume
        I = ev.interface.I
        rt = ev.filtered.rho_tilde
        q = cfg.relax_q
        relax = rt**q
        d = ev.C.shape[1]
        gI = np.zeros(ne)
        gCs = np.zeros((ne, d, d))
        g_rt = np.zeros(ne)
        gC = np.zeros((ne, d, d))
        cache = self.fe.cache
        for c, u in enumerate(ev.displacements):
            vm, sig, eps = ev.von_mises[c], ev.stresses[c], ev.strains[c]
            h, dh = cons.stress_integrand(vm, cfg.sigma_bar, self.stress_spec)
            gI += h * v
            g_vm = I * dh * v
            if not np.any(g_vm):
                continue
            safe = np.where(vm > 0, vm, 1.0)
            g_sig = np.where(vm[:, None] > 0, (g_vm / safe)[:, None] * (sig @ self.V), 0.0)
            gCs += relax[:, None, None] * np.einsum("ea,eb->eab", g_sig, eps)
            with np.errstate(divide="ignore", invalid="ignore"):
                g_rt += np.where(rt > 0, q * np.einsum("ea,ea->e", g_sig, sig) / rt, 0.0)
            g_eps = relax[:, None] * np.einsum("eba,eb->ea", ev.C_solid, g_sig)
            pseudo = np.zeros(mesh.n_dofs)
            np.add.at(pseudo, cache.edof, g_eps @ cache.B_centroid)
            lam = self.fe.solve(ev.system, -pseudo, guess=self._guesses.get(("lam", c)))
            self._guesses[("lam", c)] = lam
            gC += self._energy_cotangent(u, lam)
        return self.pullback(ev, gC=gC, gCs=gCs, g_rho_t=g_rt, gI=gI)

    def evaluate(self, state: DesignState, schedule: Schedule | None = None,
                 gradients: bool = True, stress_gradient: bool = True) -> Evaluation:
        schedule = schedule or Schedule.from_config(self.config)
        ev = self.forward(state, schedule)
        if gradients:
            dF = self.compliance_sensitivities(ev)
            dg1 = self.volume_sensitivities(ev)
            if stress_gradient:
                dg2 = self.stress_sensitivities(ev)
            else:
                dg2 = DesignState(np.zeros_like(state.rho), np.zeros_like(state.memberships),
                                  np.zeros_like(state.orientation_vars))
            ev.sensitivities = SensitivityBundle(dF, dg1, dg2)
        return ev

    def functional(self, state: DesignState, name: str, schedule: Schedule | None = None) -> float:
        return self.evaluate(state, schedule, gradients=False).values[name]

    # diagnostics -------------------------------------------------------
    def diagnostics(self, ev: Evaluation) -> dict:
        mesh = self.mesh
        mask = mesh.domain_mask
        rt = ev.filtered.rho_tilde
        v = mesh.element_volume
        gray = float(np.sum(4.0 * rt[mask] * (1.0 - rt[mask])) * v / mesh.V0)
        solid = (rt > 0.5) & mask
        w = ev.weights[solid]
        tot = w.sum(axis=1)
        frac = np.where(tot > 0, w.max(axis=1) / np.where(tot > 0, tot, 1.0), 0.0)
        member = float(np.mean(1.0 - frac)) if frac.size else 0.0
        return {
            "gray_level": gray,
            "membership_discreteness": member,
            "max_interface_stress": cons.max_interface_stress(ev.interface.I, ev.von_mises),
            "interface_volume": cons.interface_volume(ev.interface.I, mesh),
        }

    def build_vectors(self, ev: Evaluation) -> list:
        """Recovered build vectors; near-rank-one tensors are flagged, not warned about."""
        out = []
        for a in ev.orientation:
            amat = np.array([[a[0], a[3], a[4]], [a[3], a[1], a[5]], [a[4], a[5], a[2]]])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                out.append(recover_build_vector(amat))
        return out


def compliance_sensitivities(evaluator: Evaluator, ev: Evaluation) -> DesignState:
    return evaluator.compliance_sensitivities(ev)


def stress_sensitivities(evaluator: Evaluator, ev: Evaluation) -> DesignState:
    return evaluator.stress_sensitivities(ev)


VARIABLE_CLASSES = ("rho", "m", "q")


def _field(state: DesignState, cls: str) -> np.ndarray:
    return {"rho": state.rho, "m": state.memberships, "q": state.orientation_vars}[cls]


def fd_oracle(evaluator: Evaluator, state: DesignState, functional: str, variable: tuple,
              step: float = 1e-6, schedule: Schedule | None = None) -> float:
    """Central difference of the whole pipeline in one raw design variable.

    ``variable`` is ``(class, index)`` with class in {"rho", "m", "q"} and a
    flat index into that field.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    cls, idx = variable
    base = _field(state, cls).ravel()
    if cls == "q":
        lo, hi = (0.0, 1.0) if idx % 6 < 3 else (-1.0, 1.0)
    else:
        lo, hi = 0.0, 1.0
    x = base[idx]
    if x - step < lo or x + step > hi:
        raise ValueError(f"{cls}[{idx}] = {x} is not an interior point for step {step}")
    vals = []
    for sgn in (1.0, -1.0):
        s = state.copy()
        _field(s, cls).ravel()[idx] = x + sgn * step  # ravel of a contiguous array is a view
        vals.append(evaluator.functional(s, functional, schedule))
    return (vals[0] - vals[1]) / (2.0 * step)


def adjoint_value(ev: Evaluation, functional: str, variable: tuple) -> float:
    cls, idx = variable
    return float(_field(ev.sensitivities[functional], cls).ravel()[idx])


GRADIENT_TOLERANCES = {"F": 1e-3, "g1": 1e-3, "g2": 1e-2}


def sample_variables(state: DesignState, dim: int, samples: int, rng, step: float) -> dict:
    """Up to ``samples`` interior flat indices per variable class."""
    out = {}
    free_q = free_orientation_slots(dim)
    for cls in VARIABLE_CLASSES:
        vals = _field(state, cls)
        flat = vals.ravel()
        if cls == "q":
            cols = np.tile(np.arange(6), vals.shape[0])
            lo = np.where(cols < 3, 0.0, -1.0)
            pool = np.flatnonzero(np.isin(cols, free_q) & (flat - step > lo) & (flat + step < 1.0))
        else:
            pool = np.flatnonzero((flat - step > 0.0) & (flat + step < 1.0))
        out[cls] = rng.choice(pool, size=min(samples, pool.size), replace=False)
    return out


def gradient_check(evaluator: Evaluator, state: DesignState, samples: int = 30, seed: int = 0,
                   step: float = 1e-5, schedule: Schedule | None = None, floor: float = 1e-8) -> dict:
    """Worst relative adjoint-vs-central-difference error per (functional, class).

    The error is ``|adj - fd| / max(|fd|, floor * scale)`` where ``scale`` is
    the largest adjoint entry of that functional, so vanishing entries do
    not blow up the ratio.
    """
    rng = np.random.default_rng(seed)
    schedule = schedule or Schedule.from_config(evaluator.config)
    evaluator._guesses.clear()
    ev = evaluator.evaluate(state, schedule)
    picks = sample_variables(state, evaluator.dim, samples, rng, step)
    report = {}
    for fn in FUNCTIONALS:
        sens = ev.sensitivities[fn]
        scale = max(float(np.max(np.abs(_field(sens, c)))) for c in VARIABLE_CLASSES)
        for cls in VARIABLE_CLASSES:
            worst = 0.0
            for idx in picks[cls]:
                a = adjoint_value(ev, fn, (cls, int(idx)))
                f = fd_oracle(evaluator, state, fn, (cls, int(idx)), step, schedule)
                worst = max(worst, abs(a - f) / max(abs(f), floor * scale, 1e-300))
            report[(fn, cls)] = worst
    return report
