import numpy as np
import pytest

from mtoa.elasticity import isotropic_tensor
from mtoa.fem import (ElementMatrixCache, FEModel, FESolveError, compliance, local_offsets,
                      strain_displacement, von_mises, von_mises_stress)
from mtoa.model import Mesh
from oracles import q4_plane_stress


def clamped_left(nx, ny, h=1.0):
    mesh0 = Mesh(2, nx, ny, element_size=h)
    fixed = [2 * mesh0.node(0, iy) + a for iy in range(ny + 1) for a in (0, 1)]
    tip = 2 * mesh0.node(nx, ny // 2) + 1
    return Mesh(2, nx, ny, element_size=h, fixed_dofs=fixed, load_cases=[{tip: -1.0}])


def boundary_dofs(mesh):
    coords = np.indices(mesh.node_shape).reshape(mesh.dim, -1)[::-1]
    ends = np.array([mesh.nelx, mesh.nely, mesh.nelz][:mesh.dim])[:, None]
    on = np.any((coords == 0) | (coords == ends), axis=0)
    nodes = np.flatnonzero(on)
    return (mesh.dim * nodes[:, None] + np.arange(mesh.dim)).ravel(), coords


def test_q4_matrix_matches_closed_form():
    mesh = Mesh(2, 1, 1)
    cache = ElementMatrixCache.build(mesh)
    Ke = cache.element_matrices(isotropic_tensor(1.0, 0.3, 2)[None])[0]
    np.testing.assert_allclose(Ke, q4_plane_stress(1.0, 0.3), atol=1e-14)


def test_element_matrix_scales_with_size():
    small = ElementMatrixCache.build(Mesh(3, 1, 1, 1, 1.0))
    large = ElementMatrixCache.build(Mesh(3, 1, 1, 1, 2.0))
    C = isotropic_tensor(1.0, 0.3, 3)[None]
    np.testing.assert_allclose(large.element_matrices(C), 2.0 * small.element_matrices(C), rtol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_rigid_modes_are_in_the_kernel(dim):
    mesh = Mesh(dim, 3, 2, 2 if dim == 3 else 0)
    fe = FEModel(mesh)
    C = np.repeat(isotropic_tensor(1.0, 0.3, dim)[None], mesh.n_elements, axis=0)
    K = fe.assemble_stiffness(C).K
    modes = fe.rigid_body_modes()
    assert modes.shape[1] == (3 if dim == 2 else 6)
    assert np.max(np.abs(K @ modes)) < 1e-12
    assert np.allclose((K - K.T).data, 0.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_patch_test(dim):
    """A linear boundary displacement gives uniform strain and exact energy."""
    mesh = Mesh(dim, 4, 3, 3 if dim == 3 else 0, 0.5)
    dofs, coords = boundary_dofs(mesh)
    mesh = Mesh(dim, mesh.nelx, mesh.nely, mesh.nelz, 0.5, dofs)
    rng = np.random.default_rng(0)
    G = rng.normal(size=(dim, dim)) * 1e-3
    exact = (G @ (coords * mesh.element_size)).T.ravel()
    fe = FEModel(mesh)
    C0 = isotropic_tensor(2.0, 0.25, dim)
    C = np.repeat(C0[None], mesh.n_elements, axis=0)
    u = fe.solve(fe.assemble_stiffness(C), np.zeros(mesh.n_dofs), prescribed=exact[fe.fixed])
    np.testing.assert_allclose(u, exact, atol=1e-14)
    eps = fe.cache.gauss_strains(u)
    sym = 0.5 * (G + G.T)
    voigt = [sym[0, 0], sym[1, 1], 2 * sym[0, 1]] if dim == 2 else \
        [sym[0, 0], sym[1, 1], sym[2, 2], 2 * sym[1, 2], 2 * sym[0, 2], 2 * sym[0, 1]]
    np.testing.assert_allclose(eps, np.broadcast_to(voigt, eps.shape), atol=1e-14)
    volume = mesh.n_elements * mesh.element_volume
    v = np.array(voigt)
    assert fe.energy(C, u) == pytest.approx(0.5 * volume * v @ C0 @ v, rel=1e-10)


def test_compliance_is_half_work_and_energy():
    mesh = clamped_left(16, 8)
    fe = FEModel(mesh)
    C = np.repeat(isotropic_tensor(1.0, 0.3, 2)[None], mesh.n_elements, axis=0)
    f = mesh.force_vector(0)
    u = fe.solve(fe.assemble_stiffness(C), f)
    assert compliance([u], [f]) == pytest.approx(0.5 * f @ u)
    assert compliance([u], [f]) == pytest.approx(fe.energy(C, u), rel=1e-10)
    assert u[fe.fixed].max() == 0.0


def test_cantilever_converges_towards_beam_theory():
    """Tip deflection of a slender clamped beam approaches Timoshenko theory under refinement."""
    E, nu, L, H = 1.0, 0.3, 16.0, 2.0
    errors = []
    for n in (1, 2, 4):
        nx, ny, h = int(L * n), int(H * n), 1.0 / n
        m0 = Mesh(2, nx, ny, element_size=h)
        fixed = [2 * m0.node(0, iy) + a for iy in range(ny + 1) for a in (0, 1)]
        load = {2 * m0.node(nx, iy) + 1: -1.0 / (ny + 1) for iy in range(ny + 1)}
        mesh = Mesh(2, nx, ny, element_size=h, fixed_dofs=fixed, load_cases=[load])
        fe = FEModel(mesh)
        C = np.repeat(isotropic_tensor(E, nu, 2)[None], mesh.n_elements, axis=0)
        u = fe.solve(fe.assemble_stiffness(C), mesh.force_vector(0))
        tip = -u[2 * mesh.node(nx, ny // 2) + 1]
        inertia = H**3 / 12
        shear = 1.0 / (5 / 6 * E / (2 * (1 + nu)) * H)
        errors.append(abs(tip - (L**3 / (3 * E * inertia) + L * shear)) / tip)
    assert errors[-1] < 0.03
    assert errors[0] > errors[1] > errors[2]


def test_amg_agrees_with_direct():
    m0 = Mesh(3, 6, 4, 4)
    fixed = [3 * m0.node(0, iy, iz) + a for iz in range(5) for iy in range(5) for a in range(3)]
    load = {3 * m0.node(6, 2, 2) + 2: 1.0}
    mesh = Mesh(3, 6, 4, 4, 1.0, fixed, [load])
    C = np.repeat(isotropic_tensor(1.0, 0.3, 3)[None], mesh.n_elements, axis=0)
    f = mesh.force_vector(0)
    direct = FEModel(mesh, "direct")
    amg = FEModel(mesh, "amg")
    u_d = direct.solve(direct.assemble_stiffness(C), f)
    system = amg.assemble_stiffness(C)
    u_a = amg.solve(system, f)
    np.testing.assert_allclose(u_a, u_d, rtol=1e-6, atol=1e-9 * np.abs(u_d).max())
    assert system.iterations and system.iterations[-1] > 0


def test_unsupported_structure_raises():
    mesh = Mesh(2, 4, 2, load_cases=[{3: 1.0}])
    fe = FEModel(mesh)
    C = np.repeat(isotropic_tensor(1.0, 0.3, 2)[None], mesh.n_elements, axis=0)
    with pytest.raises(FESolveError):
        fe.solve(fe.assemble_stiffness(C), mesh.force_vector(0))


def test_zero_load_short_circuits():
    mesh = clamped_left(4, 2)
    fe = FEModel(mesh)
    C = np.repeat(isotropic_tensor(1.0, 0.3, 2)[None], mesh.n_elements, axis=0)
    assert not np.any(fe.solve(fe.assemble_stiffness(C), np.zeros(mesh.n_dofs)))


def test_von_mises_reference_states():
    assert von_mises_stress(np.array([2.0, 0.0, 0.0]), 2) == pytest.approx(2.0)
    assert von_mises_stress(np.array([0.0, 0.0, 1.0]), 2) == pytest.approx(np.sqrt(3.0))
    assert von_mises_stress(np.array([1.0, 1.0, 1.0, 0, 0, 0]), 3) == pytest.approx(0.0)
    assert von_mises_stress(np.array([0, 0, 0, 0, 2.0, 0]), 3) == pytest.approx(2 * np.sqrt(3.0))


def test_relaxed_stress_scales_with_density():
    mesh = clamped_left(8, 4)
    fe = FEModel(mesh)
    C = np.repeat(isotropic_tensor(1.0, 0.3, 2)[None], mesh.n_elements, axis=0)
    u = fe.solve(fe.assemble_stiffness(C), mesh.force_vector(0))
    _, vm1, _ = von_mises(fe, [u], C, np.ones(mesh.n_elements), 0.5)
    _, vm2, _ = von_mises(fe, [u], C, np.full(mesh.n_elements, 0.25), 0.5)
    np.testing.assert_allclose(vm2, 0.5 * vm1)


def test_b_matrix_shapes_and_offsets():
    assert local_offsets(2).tolist() == [[0, 0], [1, 0], [1, 1], [0, 1]]
    assert local_offsets(3).shape == (8, 3)
    assert strain_displacement(3, 1.0, np.zeros(3)).shape == (6, 24)
