"""Plain single-material SIMP compliance minimisation.

Independent reference for the multi-component pipeline: isotropic material,
density only, same filter / projection / continuation / MMA settings.  With
one component of isotropic material the full formulation should reproduce it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elasticity import isotropic_tensor
from .fem import FEModel
from .fields import HelmholtzFilter
from .mma import MmaState, mma_step
from .orientation import HeavisideSpec, heaviside_derivative, smoothed_heaviside

FEASIBILITY_TOL = 1e-3


@dataclass
class SimpResult:
    compliance: list = field(default_factory=list)
    volume: list = field(default_factory=list)
    rho: np.ndarray | None = None
    rho_tilde: np.ndarray | None = None

    @property
    def final_compliance(self) -> float:
        return self.compliance[-1]


def simp_reference(mesh, E: float, nu: float, config) -> SimpResult:
    cfg = config
    P, rho_min = cfg.simp_p, cfg.rho_min
    C = isotropic_tensor(E, nu, mesh.dim)
    fe = FEModel(mesh)
    filt = HelmholtzFilter(mesh, cfg.radius(mesh))
    loads = [mesh.force_vector(c) for c in range(len(mesh.load_cases))]
    mask = mesh.domain_mask
    act = mesh.active
    v_frac = mesh.element_volume / mesh.V0

    rho = np.where(mask, cfg.vol_limit, 0.0)
    x = rho[act].copy()
    mma = MmaState.new(x, cfg.move_rho)
    mma.asy_min = cfg.asy_min
    beta, last_raise = cfg.beta_start, 0
    out = SimpResult()
    for it in range(cfg.max_iter):
        spec = HeavisideSpec(beta, cfg.eta)
        rf = np.where(mask, filt(rho), 0.0)
        rt = np.where(mask, smoothed_heaviside(rf, spec), 0.0)
        s = rho_min + rt**P * (1.0 - rho_min)
        system = fe.assemble_stiffness(s[:, None, None] * C[None])
        us = [fe.solve(system, f) for f in loads]
        F = sum(0.5 * f @ u for f, u in zip(loads, us))
        g1 = float(rt[mask].sum() * v_frac - cfg.vol_limit)
        out.compliance.append(float(F))
        out.volume.append(g1)
        # -1/2 u^T dK u per element for each load case
        dF = np.zeros(mesh.n_elements)
        for u in us:
            eps = fe.cache.gauss_strains(u)
            dF -= 0.5 * np.einsum("g,ega,ab,egb->e", fe.cache.weights, eps, C, eps)
        dF *= P * rt ** (P - 1.0) * (1.0 - rho_min)
        dF = filt.transpose(np.where(mask, heaviside_derivative(rf, spec) * dF, 0.0))
        dg = filt.transpose(np.where(mask, heaviside_derivative(rf, spec) * v_frac, 0.0))
        hist = out.compliance
        w = cfg.obj_tol_window
        if (beta >= cfg.beta_max and g1 <= FEASIBILITY_TOL and len(hist) > w
                and all(abs(b - a) / abs(b) < cfg.obj_tol for a, b in zip(hist[-w - 1:-1], hist[-w:]))):
            break
        if it == cfg.max_iter - 1:
            break
        x = mma_step(x, 1.0, dF[act] / abs(F), np.array([g1, -1.0]),
                     np.vstack([dg[act], np.zeros(act.size)]), mma, 0.0, 1.0)
        rho = rho.copy()
        rho[act] = x
        if it + 1 - last_raise >= cfg.beta_period and beta < cfg.beta_max and g1 <= FEASIBILITY_TOL:
            beta = min(beta * cfg.beta_factor, cfg.beta_max)
            last_raise = it + 1
            mma.move = np.full(x.size, cfg.move_rho * (cfg.beta_start / beta) ** cfg.move_decay)
    out.rho, out.rho_tilde = rho, rt
    return out
