"""Orientation tensors from box-constrained design variables.

Each component carries six variables ``q = (q11, q22, q33, q12, q13, q23)``
with diagonal entries in [0, 1] and off-diagonal entries in [-1, 1].  The
diagonal part goes through a stick-breaking map onto the trace-one simplex and
the off-diagonal part through a symmetric smoothed Heaviside scaled by
``sqrt(a_ii a_jj)``, so at saturation the tensor is rank one.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

OFFDIAG = ((3, 0, 1), (4, 0, 2), (5, 1, 2))  # (slot, i, j)
Q_LOWER = np.array([0.0, 0.0, 0.0, -1.0, -1.0, -1.0])
Q_UPPER = np.ones(6)
FREE_Q_2D = (0, 3)  # only q11 and q12 move in plane problems

_SQRT_FLOOR = 1e-12


@dataclass(frozen=True)
class HeavisideSpec:
    beta: float
    eta: float = 0.5
    variant: str = "standard"

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.variant not in ("standard", "shifted", "symmetric"):
            raise ValueError(f"unknown Heaviside variant {self.variant!r}")


def _raw(x, beta, eta):
    num = np.tanh(beta * eta) + np.tanh(beta * (x - eta))
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return num / den, beta * (1.0 - np.tanh(beta * (x - eta)) ** 2) / den


def _heaviside_with_slope(x, spec: HeavisideSpec):
    x = np.asarray(x, dtype=float)
    if spec.variant == "symmetric":
        t = np.tanh(spec.beta)
        val = 0.5 * (t + np.tanh(spec.beta * x)) / t
        slope = 0.5 * spec.beta * (1.0 - np.tanh(spec.beta * x) ** 2) / t
    elif spec.variant == "shifted":
        xp = np.maximum(x, 0.0)
        val, slope = _raw(xp, spec.beta, spec.eta)
        slope = np.where(x > 0.0, slope, 0.0)
    else:
        val, slope = _raw(x, spec.beta, spec.eta)
    inside = (val >= 0.0) & (val <= 1.0)
    return np.clip(val, 0.0, 1.0), np.where(inside, slope, 0.0)


def smoothed_heaviside(x, spec: HeavisideSpec):
    val, _ = _heaviside_with_slope(x, spec)
    return val if val.ndim else float(val)


def heaviside_derivative(x, spec: HeavisideSpec):
    _, slope = _heaviside_with_slope(x, spec)
    return slope if slope.ndim else float(slope)


@dataclass(frozen=True)
class OrientationTensor:
    a11: float
    a22: float
    a33: float
    a12: float
    a13: float
    a23: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12, self.a13],
                         [self.a12, self.a22, self.a23],
                         [self.a13, self.a23, self.a33]])

    def as_vector(self) -> np.ndarray:
        return np.array([self.a11, self.a22, self.a33, self.a12, self.a13, self.a23])

    def minors(self) -> np.ndarray:
        """Second-order principal minors ``M_11, M_22, M_33``."""
        return np.array([self.a22 * self.a33 - self.a23**2,
                         self.a11 * self.a33 - self.a13**2,
                         self.a11 * self.a22 - self.a12**2])

    @classmethod
    def from_direction(cls, p) -> "OrientationTensor":
        p = np.asarray(p, dtype=float)
        p = p / np.linalg.norm(p)
        return cls(p[0] ** 2, p[1] ** 2, p[2] ** 2, p[0] * p[1], p[0] * p[2], p[1] * p[2])


def project_diagonal(q11: float, q22: float, q33: float) -> tuple[float, float, float]:
    """Stick-breaking map of the unit cube onto the trace-one simplex.

    ``q33`` has no influence; it is kept so all three diagonal slots share a box.
    """
    a11 = q11
    a22 = q22 * (1.0 - a11)
    return a11, a22, 1.0 - a11 - a22


def project_offdiagonal(q_ij: float, a_ii: float, a_jj: float, spec: HeavisideSpec) -> float:
    return (2.0 * smoothed_heaviside(q_ij, spec) - 1.0) * np.sqrt(a_ii * a_jj)


def _symmetric(spec: HeavisideSpec) -> HeavisideSpec:
    if spec.variant == "symmetric":
        return spec
    return HeavisideSpec(spec.beta, 0.0, "symmetric")


def orientation_with_jacobian(q, spec: HeavisideSpec, dim: int = 3):
    """Return ``(a, da_dq)`` with ``a`` in (a11, a22, a33, a12, a13, a23) order."""
    q = np.asarray(q, dtype=float)
    spec = _symmetric(spec)
    jac = np.zeros((6, 6))
    a = np.zeros(6)
    if dim == 2:
        a[0] = q[0]
        a[1] = 1.0 - q[0]
        jac[0, 0], jac[1, 0] = 1.0, -1.0
        pairs = ((3, 0, 1),)
    else:
        a[0], a[1], a[2] = project_diagonal(q[0], q[1], q[2])
        jac[0, 0] = 1.0
        jac[1, 0], jac[1, 1] = -q[1], 1.0 - q[0]
        jac[2, 0], jac[2, 1] = -(1.0 - q[1]), -(1.0 - q[0])
        pairs = OFFDIAG
    for slot, i, j in pairs:
        s = 2.0 * smoothed_heaviside(q[slot], spec) - 1.0
        ds = 2.0 * heaviside_derivative(q[slot], spec)
        prod = a[i] * a[j]
        root = np.sqrt(max(prod, 0.0))
        a[slot] = s * root
        jac[slot, slot] = ds * root
        # d sqrt(prod) = (a_j da_i + a_i da_j) / (2 sqrt(prod)), floored at the simplex edges
        inv = 0.5 / np.sqrt(max(prod, _SQRT_FLOOR))
        jac[slot] += s * inv * (a[j] * jac[i] + a[i] * jac[j])
    return a, jac


def assemble_orientation(q, spec: HeavisideSpec, dim: int = 3) -> OrientationTensor:
    a, _ = orientation_with_jacobian(q, spec, dim)
    return OrientationTensor(*a)


@dataclass(frozen=True)
class BuildVector:
    vector: np.ndarray
    rank_deficient: bool
    ambiguous: bool


def recover_build_vector(a, tol: float = 1e-9) -> BuildVector:
    """Dominant eigenvector of ``a``, sign-normalised so its first nonzero entry is positive."""
    m = np.asarray(getattr(a, "matrix", a), dtype=float)
    w, v = np.linalg.eigh(m)
    p = v[:, -1]
    nz = np.flatnonzero(np.abs(p) > 1e-12)
    if nz.size and p[nz[0]] < 0:
        p = -p
    ambiguous = bool(w[-1] - w[-2] <= tol)
    rank_deficient = bool(w[-2] > tol)
    if rank_deficient and not ambiguous:
        warnings.warn("orientation tensor is not rank one; returning dominant eigenvector",
                      RuntimeWarning, stacklevel=2)
    return BuildVector(p / np.linalg.norm(p), rank_deficient, ambiguous)
