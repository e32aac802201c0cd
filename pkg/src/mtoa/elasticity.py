"""Stiffness tensors in Voigt form.

Voigt order is (11, 22, 33, 23, 13, 12) with engineering shear strains, so a
stiffness matrix maps ``[e11, e22, e33, 2e23, 2e13, 2e12]`` to stresses and its
entries are plain tensor components ``C_ijkl``.  Axis 1 of the base
transversely isotropic tensor is the build direction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
# orientation components in (a11, a22, a33, a12, a13, a23) order
ORIENTATION_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
IN_PLANE = (0, 1, 5)
OUT_OF_PLANE = (2, 3, 4)

ROLES = ("transverse", "rotated", "joint", "base-combined", "combined")

_DELTA = np.eye(3)


class ThermodynamicStabilityError(ValueError):
    """Engineering constants do not give a positive definite compliance."""


@dataclass(frozen=True)
class StiffnessTensor:
    entries: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown tensor role {self.role!r}")
        if self.entries.shape not in ((3, 3), (6, 6)):
            raise ValueError(f"bad Voigt shape {self.entries.shape}")

    @property
    def dim(self) -> int:
        return 3 if self.entries.shape == (6, 6) else 2

    def is_symmetric(self) -> bool:
        c = self.entries
        return bool(np.max(np.abs(c - c.T)) <= 1e-12 * np.max(np.abs(c)))

    def is_psd(self) -> bool:
        c = self.entries
        eig = np.linalg.eigvalsh(0.5 * (c + c.T))
        return bool(eig.min() >= -1e-9 * np.max(np.abs(c)))


@dataclass(frozen=True)
class RotationCoefficients:
    B1: float
    B2: float
    B3: float
    B4: float
    B5: float


def voigt_to_full(cv: np.ndarray) -> np.ndarray:
    c = np.zeros((3, 3, 3, 3))
    for I, (i, j) in enumerate(VOIGT_PAIRS):
        for J, (k, l) in enumerate(VOIGT_PAIRS):
            for a, b in {(i, j), (j, i)}:
                for c_, d in {(k, l), (l, k)}:
                    c[a, b, c_, d] = cv[I, J]
    return c


def full_to_voigt(c: np.ndarray) -> np.ndarray:
    idx_i = np.array([p[0] for p in VOIGT_PAIRS])
    idx_j = np.array([p[1] for p in VOIGT_PAIRS])
    return c[idx_i[:, None], idx_j[:, None], idx_i[None, :], idx_j[None, :]]


def transverse_from_engineering(spec) -> StiffnessTensor:
    """Base tensor ``C_t`` from (E1, E2, nu21, nu23, G12) by inverting the compliance."""
    S = spec.compliance()
    eig = np.linalg.eigvalsh(S)
    if eig.min() <= 0.0:
        raise ThermodynamicStabilityError(
            f"compliance matrix is not positive definite (min eigenvalue {eig.min():.3g})")
    C = np.linalg.inv(S)
    C = 0.5 * (C + C.T)
    # the inversion leaves round-off in the structural zeros
    C[np.abs(C) < 1e-14 * np.max(np.abs(C))] = 0.0
    return StiffnessTensor(C, "transverse")


def rotation_coefficients(Ct: StiffnessTensor) -> RotationCoefficients:
    if Ct.role != "transverse":
        raise ValueError("rotation coefficients need the transverse base tensor")
    c = Ct.entries
    c1111, c2222, c1122, c2233, c1212 = c[0, 0], c[1, 1], c[0, 1], c[1, 2], c[5, 5]
    return RotationCoefficients(
        B1=c1111 + c2222 - 2.0 * c1122 - 4.0 * c1212,
        B2=c1122 - c2233,
        B3=c1212 + (c2233 - c2222) / 2.0,
        B4=c2233,
        B5=(c2222 - c2233) / 2.0,
    )


def _as_matrix(a) -> np.ndarray:
    return np.asarray(getattr(a, "matrix", a), dtype=float)


def _linear_terms(b: RotationCoefficients, e: np.ndarray) -> np.ndarray:
    """Terms of the closed-form rotation that are linear in the orientation tensor."""
    d = _DELTA
    return (
        b.B2 * (np.einsum("ij,kl->ijkl", e, d) + np.einsum("ij,kl->ijkl", d, e))
        + b.B3 * (np.einsum("ik,jl->ijkl", e, d) + np.einsum("il,jk->ijkl", e, d)
                  + np.einsum("jk,il->ijkl", e, d) + np.einsum("jl,ik->ijkl", e, d))
    )


def rotate_tensor(coeffs: RotationCoefficients, a) -> StiffnessTensor:
    """Rotate ``C_t`` so its build axis follows the orientation tensor ``a``.

    Uses the closed form in ``a`` and Kronecker deltas, so no angles are involved.
    """
    a = _as_matrix(a)
    tr = np.trace(a)
    if abs(tr - 1.0) > 1e-6:
        raise ValueError(f"orientation tensor trace {tr} is not 1")
    d = _DELTA
    c = (
        coeffs.B1 * np.einsum("ij,kl->ijkl", a, a)
        + _linear_terms(coeffs, a)
        + coeffs.B4 * np.einsum("ij,kl->ijkl", d, d)
        + coeffs.B5 * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    )
    return StiffnessTensor(full_to_voigt(c), "rotated")


def rotate_tensor_jacobian(coeffs: RotationCoefficients, a) -> np.ndarray:
    """Derivative of the rotated Voigt matrix, shape (6, 6, 6).

    Leading index runs over (a11, a22, a33, a12, a13, a23); an off-diagonal
    component moves both ``a_ij`` and ``a_ji``.
    """
    a = _as_matrix(a)
    out = np.empty((6, 6, 6))
    for n, (i, j) in enumerate(ORIENTATION_PAIRS):
        e = np.zeros((3, 3))
        e[i, j] = e[j, i] = 1.0
        dc = coeffs.B1 * (np.einsum("ij,kl->ijkl", e, a) + np.einsum("ij,kl->ijkl", a, e))
        dc += _linear_terms(coeffs, e)
        out[n] = full_to_voigt(dc)
    return out


def isotropic_tensor(E: float, nu: float, dim: int = 3) -> np.ndarray:
    if dim == 2:
        return E / (1.0 - nu**2) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]])
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    c = np.zeros((6, 6))
    c[:3, :3] = lam
    c[np.arange(3), np.arange(3)] += 2.0 * mu
    c[np.arange(3, 6), np.arange(3, 6)] = mu
    return c


def joint_tensor(spec, dim: int) -> StiffnessTensor:
    return StiffnessTensor(isotropic_tensor(spec.Ej, spec.nu_j, dim), "joint")


def plane_stress_transform(c6: np.ndarray) -> np.ndarray:
    """Linear map ``T`` with ``C_ps = T C6 T^T`` for the condensed tensor.

    Holding ``T`` fixed this is also the derivative of the condensation:
    ``dC_ps = T dC6 T^T``.
    """
    ip, op = list(IN_PLANE), list(OUT_OF_PLANE)
    block = c6[np.ix_(op, op)]
    if abs(np.linalg.det(block)) <= 1e-14 * np.max(np.abs(block)) ** 3:
        raise np.linalg.LinAlgError("singular out-of-plane block in plane-stress condensation")
    t = np.zeros((3, 6))
    t[:, ip] = np.eye(3)
    t[:, op] = -np.linalg.solve(block, c6[np.ix_(op, ip)]).T
    return t


def plane_stress_reduce(C6: StiffnessTensor) -> StiffnessTensor:
    """Statically condense the out-of-plane stresses (s33 = s23 = s13 = 0)."""
    c6 = C6.entries
    if c6.shape != (6, 6):
        raise ValueError("plane-stress reduction needs a 3D tensor")
    t = plane_stress_transform(c6)
    c3 = t @ c6 @ t.T
    return StiffnessTensor(0.5 * (c3 + c3.T), C6.role)
