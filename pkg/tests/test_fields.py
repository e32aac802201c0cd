import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtoa.fields import (FieldOperators, HelmholtzFilter, centroid_gradient_operators,
                         combined_base_tensor, combined_stiffness, dmo_weights, dmo_weights_vjp,
                         interface_indicator, interface_reference, simp_scale)
from mtoa.model import Mesh
from mtoa.orientation import HeavisideSpec
from oracles import laplacian_mode


def grid(nx=20, ny=12, mask=None):
    return Mesh(2, nx, ny, domain_mask=mask)


def centres(mesh):
    return np.tile(np.arange(mesh.nelx) + 0.5, mesh.nely), np.repeat(np.arange(mesh.nely) + 0.5, mesh.nelx)


def stripes(mesh, K=2):
    x, _ = centres(mesh)
    m = np.zeros((mesh.n_elements, K))
    left = x < mesh.nelx / 2
    m[left, 0] = 1.0
    m[~left, 1] = 1.0
    return m


class TestHelmholtz:
    def test_length_scale(self):
        f = HelmholtzFilter(grid(), 2.5)
        assert f.length == pytest.approx(2.5 / (2 * np.sqrt(3)))

    def test_zero_radius_is_identity(self):
        x = np.random.default_rng(0).random(240)
        np.testing.assert_array_equal(HelmholtzFilter(grid(), 0.0)(x), x)

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            HelmholtzFilter(grid(), -1.0)

    def test_constants_and_mass_preserved(self):
        mesh = grid()
        f = HelmholtzFilter(mesh, 3.0)
        np.testing.assert_allclose(f(np.full(mesh.n_elements, 0.4)), 0.4, rtol=1e-12)
        x = np.random.default_rng(1).random(mesh.n_elements)
        assert f(x).sum() == pytest.approx(x.sum(), rel=1e-12)

    @pytest.mark.parametrize("kx,ky", [(1, 0), (0, 2), (3, 1), (7, 5)])
    def test_cosine_modes_are_damped_exactly(self, kx, ky):
        mesh = grid(24, 16)
        f = HelmholtzFilter(mesh, 2.5)
        mx, lx = laplacian_mode(mesh.nelx, kx)
        my, ly = laplacian_mode(mesh.nely, ky)
        mode = np.outer(my, mx).ravel()
        gain = 1.0 / (1.0 + f.length**2 * (lx + ly))
        np.testing.assert_allclose(f(mode), gain * mode, atol=1e-12)

    def test_self_adjoint(self):
        mesh = grid()
        f = HelmholtzFilter(mesh, 2.5)
        rng = np.random.default_rng(2)
        x, y = rng.random(mesh.n_elements), rng.random(mesh.n_elements)
        assert f(x) @ y == pytest.approx(x @ f.transpose(y), rel=1e-12)

    def test_multi_column(self):
        mesh = grid()
        f = HelmholtzFilter(mesh, 2.5)
        X = np.random.default_rng(3).random((mesh.n_elements, 3))
        out = f(X)
        for k in range(3):
            np.testing.assert_allclose(out[:, k], f(X[:, k]))

    def test_masked_block_does_not_leak(self):
        mask = np.ones((12, 20), dtype=bool)
        mask[6:, 10:] = False
        mesh = grid(mask=mask.ravel())
        f = HelmholtzFilter(mesh, 3.0)
        x = np.where(mesh.domain_mask, 0.3, 0.0)
        y = x.copy()
        y[~mesh.domain_mask] = 1.0
        np.testing.assert_allclose(f(x)[mesh.domain_mask], f(y)[mesh.domain_mask], atol=1e-14)
        np.testing.assert_allclose(f(x)[mesh.domain_mask], 0.3, rtol=1e-12)


def test_centroid_gradient_of_linear_field_is_exact():
    mesh = grid(10, 8)
    ops = centroid_gradient_operators(mesh)
    # nodal averaging reproduces linear fields away from the boundary
    x, y = centres(mesh)
    field = 0.3 * x - 0.7 * y + 2.0
    gx, gy = (G @ field for G in ops)
    inner = (x > 1) & (x < mesh.nelx - 1) & (y > 1) & (y < mesh.nely - 1)
    np.testing.assert_allclose(gx[inner], 0.3, atol=1e-12)
    np.testing.assert_allclose(gy[inner], -0.7, atol=1e-12)


class TestDmo:
    def test_single_component(self):
        m = np.array([[0.0], [0.5], [1.0]])
        np.testing.assert_allclose(dmo_weights(m, 3.0), m**3)

    def test_one_hot_is_preserved(self):
        np.testing.assert_array_equal(dmo_weights(np.eye(3), 3.0), np.eye(3))

    def test_ambiguous_memberships_give_no_weight(self):
        np.testing.assert_array_equal(dmo_weights(np.array([1.0, 1.0]), 3.0), [0.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, (6, 3), elements=st.floats(0, 1)))
    def test_bounds(self, m):
        w = dmo_weights(m, 3.0)
        assert np.all(w >= 0) and np.all(w <= 1)

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, (5, 3), elements=st.floats(0.05, 0.95)), st.integers(0, 2**31))
    def test_vjp_matches_differences(self, m, seed):
        gw = np.random.default_rng(seed).normal(size=m.shape)
        g = dmo_weights_vjp(m, 3.0, gw)
        h = 1e-6
        for i, k in [(0, 0), (2, 1), (4, 2)]:
            e = np.zeros_like(m)
            e[i, k] = h
            fd = np.sum(gw * (dmo_weights(m + e, 3.0) - dmo_weights(m - e, 3.0))) / (2 * h)
            assert g[i, k] == pytest.approx(fd, rel=1e-6, abs=1e-9)


class TestMixing:
    def setup_method(self):
        rng = np.random.default_rng(4)
        A = rng.normal(size=(2, 3, 3))
        self.Cr = np.einsum("kij,klj->kil", A, A) + np.eye(3)
        self.CJ = 7.0 * np.eye(3)

    def test_simp_scale(self):
        assert simp_scale(0.0, 3.0, 1e-6) == pytest.approx(1e-6)
        assert simp_scale(1.0, 3.0, 1e-6) == pytest.approx(1.0)
        assert simp_scale(0.5, 3.0, 0.0) == pytest.approx(0.125)

    def test_void_keeps_floor(self):
        C = combined_base_tensor(0.0, [0.0, 0.0], self.Cr, 3.0, 1e-6)
        np.testing.assert_allclose(C, 1e-6 * self.Cr.mean(axis=0))
        assert np.linalg.eigvalsh(C).min() > 0

    def test_solid_pure_component(self):
        C = combined_base_tensor(1.0, [0.0, 1.0], self.Cr, 3.0, 1e-6)
        np.testing.assert_allclose(C, self.Cr[1] + 1e-6 * self.Cr.mean(axis=0))

    def test_per_element_broadcast(self):
        rt = np.array([0.2, 0.9])
        w = np.array([[1.0, 0.0], [0.3, 0.5]])
        C = combined_base_tensor(rt, w, self.Cr)
        for e in range(2):
            np.testing.assert_allclose(C[e], combined_base_tensor(rt[e], w[e], self.Cr))

    def test_interface_blend(self):
        CB = self.Cr[0]
        np.testing.assert_allclose(combined_stiffness(CB, self.CJ, 0.0, 0.5), CB)
        np.testing.assert_allclose(combined_stiffness(CB, self.CJ, 1.0, 0.5), 0.5 * self.CJ)
        np.testing.assert_allclose(combined_stiffness(CB, self.CJ, 0.25),
                                   0.75 * CB + 0.25 * self.CJ)


class TestInterface:
    spec = HeavisideSpec(8.0, 0.5)
    ispec = HeavisideSpec(8.0, 0.1, "shifted")

    def indicator(self, mesh, rho, m, phase="weights"):
        ops = FieldOperators(mesh, 2.5)
        ff = ops.filtered_fields(rho, m, 3.0, self.spec, phase)
        return interface_indicator(ff, self.ispec, mesh.element_size)

    def test_reference_scale(self):
        assert interface_reference(1.0) == pytest.approx(0.25**4)
        assert interface_reference(2.0) == pytest.approx(0.125**4)

    def test_two_stripes(self):
        mesh = grid(40, 10)
        I = self.indicator(mesh, np.ones(mesh.n_elements), stripes(mesh)).I
        x, _ = centres(mesh)
        d = np.abs(x - mesh.nelx / 2)
        assert np.all(I[d < 1] == pytest.approx(1.0))
        assert np.all(I[d >= 3 * 2.5] <= 0.01)

    @pytest.mark.parametrize("phase", ["weights", "memberships"])
    def test_single_component_has_no_interface(self, phase):
        mesh = grid()
        rng = np.random.default_rng(5)
        m = np.zeros((mesh.n_elements, 2))
        m[:, 0] = 1.0
        I = self.indicator(mesh, rng.random(mesh.n_elements), m, phase).I
        assert np.all(I == 0.0)

    def test_claimed_by_all_is_not_a_joint(self):
        # a solid block with every membership at one sits next to void
        mesh = grid(30, 10)
        x, _ = centres(mesh)
        rho = np.where(x < 15, 1.0, 0.0)
        m = np.ones((mesh.n_elements, 2))
        assert np.all(self.indicator(mesh, rho, m, "weights").I == 0.0)
        assert self.indicator(mesh, rho, m, "memberships").I.max() == pytest.approx(1.0)

    def test_unknown_phase(self):
        mesh = grid()
        with pytest.raises(ValueError):
            self.indicator(mesh, np.ones(mesh.n_elements), stripes(mesh), "bogus")

    def test_indicator_is_bounded(self):
        mesh = grid()
        rng = np.random.default_rng(6)
        I = self.indicator(mesh, rng.random(mesh.n_elements), rng.random((mesh.n_elements, 2))).I
        assert np.all((I >= 0) & (I <= 1))
