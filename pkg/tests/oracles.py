"""Independent reference implementations used only by the tests.

Nothing here imports the package; each routine follows a textbook route that
differs from the one taken in ``mtoa``.
"""
from __future__ import annotations

import numpy as np

VOIGT = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


def frame_with_axis(p) -> np.ndarray:
    """Proper rotation matrix whose first column is the unit vector ``p``."""
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    helper = np.eye(3)[np.argmin(np.abs(p))]
    t1 = np.cross(p, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(p, t1)
    return np.column_stack([p, t1, t2])


def bond_matrix(R: np.ndarray) -> np.ndarray:
    """6x6 stress transformation ``s' = M s`` for ``sigma' = R sigma R^T``.

    With engineering shear strains the stiffness transforms as ``M C M^T``.
    """
    M = np.zeros((6, 6))
    for I, (i, j) in enumerate(VOIGT):
        for J, (a, b) in enumerate(VOIGT):
            if a == b:
                M[I, J] = R[i, a] * R[j, a]
            else:
                M[I, J] = R[i, a] * R[j, b] + R[i, b] * R[j, a]
    return M


def bond_rotate(C: np.ndarray, p) -> np.ndarray:
    M = bond_matrix(frame_with_axis(p))
    return M @ C @ M.T


def mandel(C: np.ndarray) -> np.ndarray:
    """Voigt (engineering shear) stiffness to the orthonormal Mandel basis."""
    s = np.ones(C.shape[0])
    s[3:] = np.sqrt(2.0)
    if C.shape[0] == 3:
        s[2] = np.sqrt(2.0)
    return C * s[:, None] * s[None, :]


def q4_plane_stress(E: float, nu: float) -> np.ndarray:
    """Closed-form unit-square bilinear element, corners CCW from lower left.

    Coefficients as tabulated for the classic 88-line topology code.
    """
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
                  -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8])
    order = [[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 7, 6, 5, 4, 3, 2], [2, 7, 0, 5, 6, 3, 4, 1],
             [3, 6, 5, 0, 7, 2, 1, 4], [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 3, 2, 1, 0, 7, 6],
             [6, 3, 4, 1, 2, 7, 0, 5], [7, 2, 1, 4, 3, 6, 5, 0]]
    return E / (1 - nu**2) * k[np.array(order)]


def laplacian_mode(n: int, k: int) -> tuple[np.ndarray, float]:
    """Cosine eigenvector of the 1D zero-flux cell graph Laplacian and its eigenvalue."""
    i = np.arange(n)
    return np.cos(np.pi * k * (i + 0.5) / n), 2.0 - 2.0 * np.cos(np.pi * k / n)
