"""Design-field regularisation, material interpolation and the interface indicator."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .orientation import HeavisideSpec, heaviside_derivative, smoothed_heaviside


class HelmholtzFilter:
    """Element-centred finite-volume Helmholtz filter ``(I - r^2 lap) y = x``.

    Only faces between two active elements carry flux, so the filter has
    zero-flux boundaries on the grid edge and along a masked block.  The
    operator is symmetric, which makes it its own adjoint.
    """

    def __init__(self, mesh, radius: float):
        if radius < 0:
            raise ValueError("filter radius must be >= 0")
        self.mesh = mesh
        self.radius = radius
        self.length = radius / (2.0 * np.sqrt(3.0))
        self._solve = None
        if radius > 0:
            lap = grid_laplacian(mesh)
            coeff = (self.length / mesh.element_size) ** 2
            self.matrix = (sp.identity(mesh.n_elements, format="csc") + coeff * lap).tocsc()
            self._solve = spla.factorized(self.matrix)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self._solve is None:
            return np.array(x, dtype=float, copy=True)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self._solve(x)
        return np.column_stack([self._solve(np.ascontiguousarray(x[:, k])) for k in range(x.shape[1])])

    transpose = __call__


def grid_laplacian(mesh) -> sp.csr_matrix:
    """Graph Laplacian over face-adjacent active element pairs (unit weights)."""
    ids = np.arange(mesh.n_elements).reshape(mesh.shape)
    act = mesh.domain_mask.reshape(mesh.shape)
    rows, cols = [], []
    for axis in range(mesh.dim):
        lo = [slice(None)] * mesh.dim
        hi = [slice(None)] * mesh.dim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        a, b = ids[tuple(lo)].ravel(), ids[tuple(hi)].ravel()
        keep = act[tuple(lo)].ravel() & act[tuple(hi)].ravel()
        rows.append(a[keep])
        cols.append(b[keep])
    r, c = np.concatenate(rows), np.concatenate(cols)
    n = mesh.n_elements
    adj = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(n, n))
    adj = (adj + adj.T).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sp.diags(deg) - adj).tocsr()


def helmholtz_filter(field, radius: float, mesh) -> np.ndarray:
    return HelmholtzFilter(mesh, radius)(field)


def centroid_gradient_operators(mesh) -> list[sp.csr_matrix]:
    """Sparse maps from element values to centroid gradient components.

    Element values are first averaged onto nodes (equal weights over the
    adjacent elements), then differentiated with the bi/trilinear shape
    functions at the element centre.
    """
    dim, h = mesh.dim, mesh.element_size
    eshape, nshape = mesh.shape, mesh.node_shape
    eids = np.arange(mesh.n_elements).reshape(eshape)
    nids = np.arange(mesh.n_nodes).reshape(nshape)
    # node <- element averaging
    rows, cols = [], []
    for offs in np.ndindex(*(2,) * dim):
        sl = tuple(slice(o, o + n) for o, n in zip(offs, eshape))
        rows.append(nids[sl].ravel())
        cols.append(eids.ravel())
    r, c = np.concatenate(rows), np.concatenate(cols)
    avg = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(mesh.n_nodes, mesh.n_elements)).tocsr()
    counts = np.asarray(avg.sum(axis=1)).ravel()
    avg = sp.diags(1.0 / counts) @ avg
    ops = []
    corners = list(np.ndindex(*(2,) * dim))
    for d in range(dim):
        axis = dim - 1 - d  # gradient component d (x, y, z) lives on array axis dim-1-d
        rows, cols, vals = [], [], []
        for offs in corners:
            sl = tuple(slice(o, o + n) for o, n in zip(offs, eshape))
            sign = 1.0 if offs[axis] == 1 else -1.0
            rows.append(eids.ravel())
            cols.append(nids[sl].ravel())
            vals.append(np.full(mesh.n_elements, sign / (2 ** (dim - 1) * h)))
        diff = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(mesh.n_elements, mesh.n_nodes)).tocsr()
        ops.append((diff @ avg).tocsr())
    return ops


def dmo_weights(m, P: float) -> np.ndarray:
    """``w_k = m_k^P * prod_{j != k} (1 - m_j^P)``; works on a K-vector or an (n, K) array."""
    m = np.asarray(m, dtype=float)
    mp = m**P
    w = mp.copy()
    K = m.shape[-1]
    for k in range(K):
        for j in range(K):
            if j != k:
                w[..., k] *= 1.0 - mp[..., j]
    return w


def dmo_weights_vjp(m: np.ndarray, P: float, gw: np.ndarray) -> np.ndarray:
    """Pull a cotangent on the weights back to the memberships (arrays shaped (n, K))."""
    mp = m**P
    dmp = P * m ** (P - 1.0)
    K = m.shape[1]
    gm = np.zeros_like(m)
    for k in range(K):
        others = [j for j in range(K) if j != k]
        prod_k = np.prod(1.0 - mp[:, others], axis=1) if others else np.ones(m.shape[0])
        gm[:, k] += gw[:, k] * dmp[:, k] * prod_k
        for l in others:
            rest = [j for j in others if j != l]
            prod_kl = np.prod(1.0 - mp[:, rest], axis=1) if rest else np.ones(m.shape[0])
            gm[:, l] -= gw[:, k] * mp[:, k] * dmp[:, l] * prod_kl
    return gm


def simp_scale(rho_tilde, P: float, rho_min: float = 1e-6):
    return rho_min + np.asarray(rho_tilde) ** P * (1.0 - rho_min)


def combined_base_tensor(rho_tilde, weights, rotated, P: float = 3.0, rho_min: float = 1e-6):
    """``C_B = (rho_min + rho^P (1 - rho_min)) * sum_k w_k C_r^(k) + rho_min * mean_k C_r^(k)``.

    The last term keeps void and membership-degenerate elements (all weights
    zero) nonsingular.  ``rotated`` is a (K, d, d) stack; scalar or
    per-element inputs both work.
    """
    rotated = np.asarray(rotated, dtype=float)
    mix = np.tensordot(np.asarray(weights, dtype=float), rotated, axes=([-1], [0]))
    scale = simp_scale(rho_tilde, P, rho_min)
    return np.asarray(scale)[..., None, None] * mix + rho_min * rotated.mean(axis=0)


def combined_stiffness(C_B, C_J, I, joint_scale=1.0):
    """``(1 - I) C_B + I s C_J``; ``s`` is the SIMP factor so void cannot carry joints."""
    I = np.asarray(I, dtype=float)[..., None, None]
    s = np.asarray(joint_scale, dtype=float)[..., None, None]
    return (1.0 - I) * np.asarray(C_B) + I * s * np.asarray(C_J)


def interface_reference(element_size: float) -> float:
    """Normalisation of the raw indicator: ``(0.25 / h)^4``.

    Both gradient magnitudes equal 0.25/h when a 0-to-1 jump in rho^p m is
    smeared over four element widths, i.e. a sharp interface resolved over
    about 2h on either side.
    """
    return (0.25 / element_size) ** 4


@dataclass
class FilteredFields:
    rho_filtered: np.ndarray  # before projection
    m_filtered: np.ndarray
    rho_tilde: np.ndarray
    m_tilde: np.ndarray
    phase: np.ndarray  # (n, K): per-component field inside the products
    products: np.ndarray  # (n, K): rho_tilde^P * phase
    grad_cache: np.ndarray  # (K, dim, n): centroid gradients of the products


@dataclass
class InterfaceField:
    I: np.ndarray
    raw: np.ndarray
    reference: float
    slope: np.ndarray  # dI / d raw


class FieldOperators:
    """Per-mesh operators shared by every iteration."""

    def __init__(self, mesh, radius: float):
        self.mesh = mesh
        self.filter = HelmholtzFilter(mesh, radius)

    @cached_property
    def gradients(self) -> list[sp.csr_matrix]:
        return centroid_gradient_operators(self.mesh)

    def filtered_fields(self, rho, m, P: float, spec: HeavisideSpec,
                        phase: str = "weights") -> FilteredFields:
        mask = self.mesh.domain_mask
        rf = self.filter(rho)
        mf = self.filter(m)
        rt = np.where(mask, smoothed_heaviside(rf, spec), 0.0)
        mt = np.where(mask[:, None], smoothed_heaviside(mf, spec), 0.0)
        return self.with_products(rf, mf, rt, mt, P, phase)

    def with_products(self, rf, mf, rt, mt, P: float, phase: str = "weights") -> FilteredFields:
        """``phase`` selects the component field: DMO ``weights`` or raw ``memberships``.

        With raw memberships an element claimed by every component has zero base
        stiffness yet still reads as an interface at any solid/void edge; the
        weights vanish there, so only genuine component boundaries register.
        """
        if phase == "weights":
            ph = dmo_weights(mt, P)
        elif phase == "memberships":
            ph = mt
        else:
            raise ValueError(f"unknown interface phase {phase!r}")
        prod = rt[:, None] ** P * ph
        grads = np.stack([np.stack([g @ prod[:, k] for g in self.gradients]) for k in range(prod.shape[1])])
        return FilteredFields(rf, mf, rt, mt, ph, prod, grads)


def interface_indicator(filtered: FilteredFields, spec: HeavisideSpec, element_size: float) -> InterfaceField:
    """``I = H_shift(sum_{i>j} |grad(rho^P w_i)|^2 |grad(rho^P w_j)|^2 / reference)``."""
    norms = np.sum(filtered.grad_cache**2, axis=1)  # (K, n)
    total = norms.sum(axis=0)
    # sum_{i>j} n_i n_j = ((sum n)^2 - sum n^2) / 2, but summing pairs keeps exact zeros
    K = norms.shape[0]
    raw = np.zeros_like(total)
    for i in range(K):
        for j in range(i):
            raw += norms[i] * norms[j]
    ref = interface_reference(element_size)
    I = smoothed_heaviside(raw / ref, spec)
    slope = heaviside_derivative(raw / ref, spec) / ref
    return InterfaceField(np.asarray(I, dtype=float), raw, ref, np.asarray(slope))


def interface_vjp(filtered: FilteredFields, interface: InterfaceField, gradients, gI: np.ndarray,
                  P: float) -> tuple[np.ndarray, np.ndarray]:
    """Cotangent on ``I`` -> cotangents on (rho_tilde, phase field)."""
    norms = np.sum(filtered.grad_cache**2, axis=1)
    graw = gI * interface.slope
    total = norms.sum(axis=0)
    rt, mt = filtered.rho_tilde, filtered.phase
    g_rho = np.zeros_like(rt)
    g_m = np.zeros_like(mt)
    rp = rt**P
    drp = P * rt ** (P - 1.0)
    for k in range(norms.shape[0]):
        gn = graw * (total - norms[k])
        if not np.any(gn):
            continue
        gs = np.zeros_like(rt)
        for d, G in enumerate(gradients):
            gs += G.T @ (2.0 * gn * filtered.grad_cache[k, d])
        g_rho += gs * drp * mt[:, k]
        g_m[:, k] += gs * rp
    return g_rho, g_m
