"""Linear elasticity on the regular grid: Q4/H8 elements, 2x2(x2) Gauss rule."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


class FESolveError(RuntimeError):
    pass


def local_offsets(dim: int) -> np.ndarray:
    """Element corner offsets in (x, y[, z]), counter-clockwise per layer."""
    quad = [(0, 0), (1, 0), (1, 1), (0, 1)]
    if dim == 2:
        return np.array(quad)
    return np.array([(x, y, z) for z in (0, 1) for (x, y) in quad])


def strain_displacement(dim: int, h: float, xi) -> np.ndarray:
    """Voigt B-matrix at reference point ``xi`` in [-1, 1]^dim (engineering shear)."""
    offs = local_offsets(dim)
    signs = 2.0 * offs - 1.0
    nn = len(offs)
    dN = np.zeros((nn, dim))
    for a in range(nn):
        for d in range(dim):
            val = signs[a, d] / 2.0
            for e in range(dim):
                if e != d:
                    val *= (1.0 + signs[a, e] * xi[e]) / 2.0
            dN[a, d] = val * 2.0 / h
    if dim == 2:
        B = np.zeros((3, 2 * nn))
        B[0, 0::2] = dN[:, 0]
        B[1, 1::2] = dN[:, 1]
        B[2, 0::2] = dN[:, 1]
        B[2, 1::2] = dN[:, 0]
        return B
    B = np.zeros((6, 3 * nn))
    for d in range(3):
        B[d, d::3] = dN[:, d]
    B[3, 1::3], B[3, 2::3] = dN[:, 2], dN[:, 1]
    B[4, 0::3], B[4, 2::3] = dN[:, 2], dN[:, 0]
    B[5, 0::3], B[5, 1::3] = dN[:, 1], dN[:, 0]
    return B


@dataclass
class ElementMatrixCache:
    B: np.ndarray  # (ngauss, nvoigt, nedof)
    weights: np.ndarray  # Gauss weight times det J
    B_centroid: np.ndarray
    edof: np.ndarray  # (ne, nedof)

    @classmethod
    def build(cls, mesh) -> "ElementMatrixCache":
        dim, h = mesh.dim, mesh.element_size
        g = 1.0 / np.sqrt(3.0)
        pts = list(itertools.product((-g, g), repeat=dim))
        B = np.stack([strain_displacement(dim, h, p) for p in pts])
        w = np.full(len(pts), (h / 2.0) ** dim)
        Bc = strain_displacement(dim, h, np.zeros(dim))
        offs = local_offsets(dim)
        idx = np.indices(mesh.shape).reshape(dim, -1)[::-1]  # (x, y[, z]) element indices
        nodes = []
        for o in offs:
            c = idx + o[:, None]
            n = c[0] + (mesh.nelx + 1) * c[1]
            if dim == 3:
                n = n + (mesh.nelx + 1) * (mesh.nely + 1) * c[2]
            nodes.append(n)
        nodes = np.stack(nodes, axis=1)
        edof = (dim * nodes[:, :, None] + np.arange(dim)).reshape(mesh.n_elements, -1)
        return cls(B, w, Bc, edof)

    def element_matrices(self, C: np.ndarray) -> np.ndarray:
        """``K_e = sum_g w_g B_g^T C_e B_g`` for a stack of constitutive matrices."""
        CB = np.einsum("eab,gbj->egaj", C, self.B, optimize=True)
        return np.einsum("g,gai,egaj->eij", self.weights, self.B, CB, optimize=True)

    def gauss_strains(self, u: np.ndarray) -> np.ndarray:
        """(ne, ngauss, nvoigt) strains of a global displacement vector."""
        return np.einsum("gai,ei->ega", self.B, u[self.edof], optimize=True)

    def centroid_strains(self, u: np.ndarray) -> np.ndarray:
        return u[self.edof] @ self.B_centroid.T


@dataclass
class LinearSystem:
    K: sp.csr_matrix
    K_free: sp.csc_matrix
    free: np.ndarray
    fixed: np.ndarray
    method: str = "direct"
    near_nullspace: np.ndarray | None = None
    _solver: object = field(default=None, repr=False)
    iterations: list = field(default_factory=list)

    def factor(self):
        if self._solver is None:
            if self.method == "direct":
                try:
                    lu = spla.splu(self.K_free, permc_spec="MMD_AT_PLUS_A")
                except RuntimeError as exc:
                    raise FESolveError(f"factorisation failed: {exc}") from exc
                self._solver = lu.solve
            else:
                import pyamg

                ml = pyamg.smoothed_aggregation_solver(self.K_free.tocsr(), B=self.near_nullspace,
                                                       symmetry="symmetric", max_coarse=500)
                self._solver = ml
        return self._solver


class FEModel:
    """Assembly and solution for one mesh; reuses the sparsity pattern across calls."""

    def __init__(self, mesh, method: str | None = None):
        self.mesh = mesh
        self.cache = ElementMatrixCache.build(mesh)
        ndof = mesh.n_dofs
        self.fixed = mesh.fixed_dofs
        free_mask = np.ones(ndof, dtype=bool)
        free_mask[self.fixed] = False
        self.free = np.flatnonzero(free_mask)
        edof = self.cache.edof
        rows = np.repeat(edof, edof.shape[1], axis=1).ravel()
        cols = np.tile(edof, (1, edof.shape[1])).ravel()
        keys = rows.astype(np.int64) * ndof + cols
        uniq, self._inverse = np.unique(keys, return_inverse=True)
        self._rows, self._cols = uniq // ndof, uniq % ndof
        self._nnz = uniq.size
        if method is None:
            method = "direct" if mesh.dim == 2 or self.free.size < 20000 else "amg"
        self.method = method

    def assemble_stiffness(self, C: np.ndarray) -> LinearSystem:
        """Global stiffness from per-element constitutive matrices (ne, nv, nv)."""
        ke = self.cache.element_matrices(C)
        data = np.bincount(self._inverse, weights=ke.ravel(), minlength=self._nnz)
        n = self.mesh.n_dofs
        K = sp.csr_matrix((data, (self._rows, self._cols)), shape=(n, n))
        K_free = K[self.free][:, self.free].tocsc()
        rbm = self.rigid_body_modes()[self.free] if self.method == "amg" else None
        return LinearSystem(K, K_free, self.free, self.fixed, self.method, rbm)

    def rigid_body_modes(self) -> np.ndarray:
        """Translations and infinitesimal rotations, one column each."""
        mesh = self.mesh
        dim = mesh.dim
        coords = np.indices(mesh.node_shape).reshape(dim, -1)[::-1] * mesh.element_size
        n = mesh.n_nodes
        if dim == 2:
            modes = np.zeros((2 * n, 3))
            modes[0::2, 0] = modes[1::2, 1] = 1.0
            modes[0::2, 2], modes[1::2, 2] = -coords[1], coords[0]
            return modes
        x, y, z = coords
        modes = np.zeros((3 * n, 6))
        for a in range(3):
            modes[a::3, a] = 1.0
        modes[0::3, 3], modes[1::3, 3] = -y, x
        modes[1::3, 4], modes[2::3, 4] = -z, y
        modes[0::3, 5], modes[2::3, 5] = z, -x
        return modes

    def solve(self, system: LinearSystem, f: np.ndarray, prescribed: np.ndarray | None = None,
              rtol: float = 1e-8, guess: np.ndarray | None = None, fail_tol: float = 1e-6) -> np.ndarray:
        """Displacements for load ``f``; ``prescribed`` gives values on the fixed DOFs.

        Direct solves get up to three refinement sweeps towards ``rtol``; a
        relative residual above ``fail_tol`` raises FESolveError.
        """
        u = np.zeros(self.mesh.n_dofs)
        rhs = f[system.free].astype(float)
        if prescribed is not None:
            u[system.fixed] = prescribed
            rhs = rhs - system.K[system.free][:, system.fixed] @ prescribed
        norm = np.linalg.norm(rhs)
        if norm == 0.0:
            return u
        solver = system.factor()
        if system.method == "direct":
            x = solver(rhs)
            r = rhs - system.K_free @ x
            for _ in range(3):
                if np.linalg.norm(r) <= rtol * norm:
                    break
                x = x + solver(r)
                r = rhs - system.K_free @ x
        else:
            residuals = []
            x0 = None if guess is None else guess[system.free]
            x = solver.solve(rhs, x0=x0, tol=rtol * 1e-2, accel="cg", maxiter=1000,
                             residuals=residuals)
            system.iterations.append(len(residuals))
        res = np.linalg.norm(system.K_free @ x - rhs) / norm
        if not np.isfinite(res) or res > max(rtol, fail_tol):
            raise FESolveError(f"linear solve residual {res:.3e} exceeds {max(rtol, fail_tol):.1e} "
                               f"(method={system.method}, iterations={system.iterations[-1:]})")
        if res > rtol:
            logger.debug("linear solve residual %.3e above target %.1e", res, rtol)
        u[system.free] = x
        return u

    def energy(self, C: np.ndarray, u: np.ndarray) -> float:
        """``integral 1/2 sigma^T eps`` by Gauss quadrature."""
        eps = self.cache.gauss_strains(u)
        sig = np.einsum("eab,egb->ega", C, eps)
        return 0.5 * float(np.einsum("g,ega,ega->", self.cache.weights, sig, eps))


@dataclass
class SolutionBundle:
    displacements: list
    compliances: np.ndarray
    stresses: np.ndarray  # (ncases, ne, nv) relaxed centroid stresses
    von_mises: np.ndarray  # (ncases, ne)
    strains: np.ndarray  # (ncases, ne, nv) centroid strains


def compliance(displacements, loads) -> float:
    return float(sum(0.5 * np.dot(f, u) for f, u in zip(loads, displacements)))


def von_mises_matrix(dim: int) -> np.ndarray:
    """``V`` with ``sigma_vm^2 = s^T V s`` (plane stress for dim 2)."""
    if dim == 2:
        return np.array([[1.0, -0.5, 0.0], [-0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])
    V = np.zeros((6, 6))
    V[:3, :3] = -0.5
    V[np.arange(3), np.arange(3)] = 1.0
    V[np.arange(3, 6), np.arange(3, 6)] = 3.0
    return V


def von_mises_stress(sigma: np.ndarray, dim: int) -> np.ndarray:
    V = von_mises_matrix(dim)
    return np.sqrt(np.maximum(np.einsum("...a,ab,...b->...", sigma, V, sigma), 0.0))


def von_mises(model: FEModel, displacements, C_solid: np.ndarray, rho_tilde: np.ndarray,
              relax_q: float):
    """Relaxed centroid stresses ``rho^q C_solid eps`` and their von Mises values."""
    relax = np.asarray(rho_tilde) ** relax_q
    strains = np.stack([model.cache.centroid_strains(u) for u in displacements])
    stresses = relax[None, :, None] * np.einsum("eab,ceb->cea", C_solid, strains)
    return stresses, von_mises_stress(stresses, model.mesh.dim), strains
