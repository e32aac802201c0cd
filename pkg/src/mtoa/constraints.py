"""Volume constraint and the aggregated interface stress constraint."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .orientation import HeavisideSpec, heaviside_derivative, smoothed_heaviside


@dataclass
class ConstraintValues:
    g1: float
    g2: float
    max_interface_stress: float
    interface_volume: float


def volume_constraint(rho_tilde, mesh, vol_limit: float) -> float:
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    vol = np.sum(rho_tilde[mesh.domain_mask]) * mesh.element_volume
    return float(vol / mesh.V0 - vol_limit)


def stress_integrand(sigma, sigma_bar: float, spec: HeavisideSpec):
    """``H((s - sb)/sb) (s/sb)^2`` and its derivative in ``s``."""
    sigma = np.asarray(sigma, dtype=float)
    x = (sigma - sigma_bar) / sigma_bar
    H = smoothed_heaviside(x, spec)
    dH = heaviside_derivative(x, spec)
    ratio = sigma / sigma_bar
    val = H * ratio**2
    dval = dH * ratio**2 / sigma_bar + H * 2.0 * ratio / sigma_bar
    return val, dval


def stress_constraint(I, sigma, sigma_bar: float, eps_bar: float, spec: HeavisideSpec, mesh) -> float:
    """``sum_e I_e H((s_e - sb)/sb) (s_e/sb)^2 v_e - eps_bar``.

    ``sigma`` may be (ne,) or (ncases, ne); load cases add up.
    """
    val, _ = stress_integrand(sigma, sigma_bar, spec)
    val = np.atleast_2d(val)
    return float(np.sum(np.asarray(I)[None, :] * val) * mesh.element_volume - eps_bar)


def stress_spec(beta_stress: float = 16.0) -> HeavisideSpec:
    """Aggregation Heaviside: fixed sharpness, threshold at zero."""
    return HeavisideSpec(beta_stress, 0.0, "standard")


def max_interface_stress(I, sigma, threshold: float = 0.5) -> float:
    sigma = np.atleast_2d(sigma).max(axis=0)
    sel = np.asarray(I) >= threshold
    return float(sigma[sel].max()) if np.any(sel) else 0.0


def interface_volume(I, mesh) -> float:
    return float(np.sum(I) * mesh.element_volume)
