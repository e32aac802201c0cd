import json

import numpy as np
import pytest

from mtoa.model import (ConfigError, DesignState, JointSpec, MaterialSpec, Mesh, OptimizationConfig,
                        build_problem, free_orientation_slots, initialize_state, problem_document,
                        resolve_document)
from mtoa.presets import PRESETS, describe, load_node_positions, preset_document, unknown_preset


class TestMesh:
    def test_counts_2d(self):
        m = Mesh(2, 4, 3)
        assert m.shape == (3, 4) and m.node_shape == (4, 5)
        assert (m.n_elements, m.n_nodes, m.n_dofs) == (12, 20, 40)
        assert m.node(4, 3) == 19

    def test_counts_3d(self):
        m = Mesh(3, 2, 3, 4, element_size=0.5)
        assert m.shape == (4, 3, 2)
        assert m.n_dofs == 3 * 3 * 4 * 5
        assert m.element_volume == 0.125
        assert m.node(2, 3, 4) == m.n_nodes - 1

    @pytest.mark.parametrize("kwargs,key", [
        ({"dim": 4, "nelx": 2, "nely": 2}, "mesh.dim"),
        ({"dim": 2, "nelx": 0, "nely": 2}, "mesh.nelx"),
        ({"dim": 3, "nelx": 2, "nely": 2}, "mesh.nelz"),
        ({"dim": 2, "nelx": 2, "nely": 2, "element_size": 0}, "mesh.element_size"),
        ({"dim": 2, "nelx": 2, "nely": 2, "fixed_dofs": [18]}, "mesh.fixed_dofs"),
        ({"dim": 2, "nelx": 2, "nely": 2, "load_cases": [{-1: 1.0}]}, "mesh.load_cases"),
        ({"dim": 2, "nelx": 2, "nely": 2, "domain_mask": [0, 0, 0, 0]}, "mesh.domain_mask"),
    ])
    def test_invalid(self, kwargs, key):
        with pytest.raises(ConfigError) as info:
            Mesh(**kwargs)
        assert info.value.key == key

    def test_force_vector_sums_duplicates(self):
        m = Mesh(2, 2, 2, load_cases=[{3: 1.5, 5: -2.0}])
        f = m.force_vector(0)
        assert f[3] == 1.5 and f[5] == -2.0 and f.sum() == -0.5


class TestSpecs:
    def test_material_defaults_are_transversely_isotropic(self):
        s = MaterialSpec().compliance()
        assert s[1, 1] == s[2, 2] and s[4, 4] == s[5, 5]
        assert np.allclose(s, s.T)

    def test_material_warns_on_stiff_build_axis(self):
        with pytest.warns(UserWarning):
            MaterialSpec(E1=20.0)

    @pytest.mark.parametrize("cls,kwargs", [
        (MaterialSpec, {"E1": -1.0}), (JointSpec, {"Ej": 0.0}), (JointSpec, {"nu_j": 0.5}),
        (OptimizationConfig, {"vol_limit": 1.2}), (OptimizationConfig, {"K": 0}),
        (OptimizationConfig, {"relax_q": 4.0}), (OptimizationConfig, {"beta_max": 2.0}),
        (OptimizationConfig, {"asy_min": 0.0}), (OptimizationConfig, {"interface_phase": "x"}),
        (OptimizationConfig, {"move_decay": -1.0}),
    ])
    def test_rejected(self, cls, kwargs):
        with pytest.raises(ConfigError):
            cls(**kwargs)

    def test_default_radius(self):
        mesh = Mesh(2, 4, 4, element_size=0.5)
        assert OptimizationConfig().radius(mesh) == pytest.approx(1.25)
        assert OptimizationConfig(filter_radius=3.0).radius(mesh) == 3.0


class TestDocuments:
    def test_presets_build(self):
        for name in PRESETS:
            mesh_args = {"nelx": 6} if name == "multiload3d" else {"nelx": 20, "nely": 10}
            pb = build_problem({"preset": name, "mesh": mesh_args})
            assert pb.mesh.load_cases and pb.mesh.fixed_dofs.size
            assert describe(name)

    def test_round_trip(self):
        pb = build_problem({"preset": "lbracket2d", "mesh": {"nelx": 20, "nely": 20},
                            "joint": {"Ej": 4.0}, "optimization": {"sigma_bar": 3.0}})
        doc = json.loads(json.dumps(problem_document(pb)))
        again = build_problem(doc)
        assert problem_document(again) == problem_document(pb)
        assert again.config.sigma_bar == 3.0 and again.joint.Ej == 4.0
        assert not again.mesh.domain_mask.all()

    def test_string_document(self):
        pb = build_problem('{"preset": "bridge2d", "mesh": {"nelx": 12, "nely": 6}}')
        assert pb.mesh.nelx == 12 and pb.config.K == 2

    @pytest.mark.parametrize("doc,key", [
        ({"preset": "bridge2d", "extra": {}}, "extra"),
        ({"preset": "bridge2d", "joint": {"stiffness": 1}}, "joint.stiffness"),
        ({"preset": "bridge2d", "mesh": {"bogus": 1}}, "mesh"),
        ({"mesh": {"dim": 2, "nelx": 3}}, "mesh.nely"),
        ({"material": {}}, "mesh"),
    ])
    def test_bad_documents(self, doc, key):
        with pytest.raises(ConfigError) as info:
            build_problem(doc)
        assert info.value.key == key

    def test_parse_error(self):
        with pytest.raises(ConfigError):
            resolve_document("{not json")

    def test_unknown_preset_suggests(self):
        err = unknown_preset("brige2d")
        assert "bridge2d" in str(err)
        with pytest.raises(ConfigError):
            preset_document("nothing-like-it")

    def test_void_boxes(self):
        doc = {"mesh": {"dim": 2, "nelx": 4, "nely": 4, "void_boxes": [[2, 4, 2, 4]],
                        "fixed_dofs": [0, 1], "load_cases": [{"3": 1.0}]}}
        mask = build_problem(doc).mesh.domain_mask.reshape(4, 4)
        assert mask[:2].all() and mask[2:, :2].all() and not mask[2:, 2:].any()


class TestPresets:
    def test_bridge_supports_and_loads(self):
        pb = build_problem({"preset": "bridge2d", "mesh": {"nelx": 30, "nely": 15}})
        f = pb.mesh.force_vector(0)
        assert f.sum() == pytest.approx(-3.0)
        assert len(pb.mesh.fixed_dofs) == 3

    def test_multiload_is_cyclic(self):
        pb = build_problem({"preset": "multiload3d", "mesh": {"nelx": 6}})
        mesh = pb.mesh
        assert len(mesh.load_cases) == 3
        totals = [sum(lc.values()) for lc in mesh.load_cases]
        assert totals == pytest.approx([1.0, 1.0, 1.0])
        axes = [{d % 3 for d in lc} for lc in mesh.load_cases]
        assert axes == [{1}, {2}, {0}]

    def test_load_positions(self):
        pb = build_problem({"preset": "cantilever2d", "mesh": {"nelx": 10, "nely": 6}})
        pos = load_node_positions(pb.mesh)
        assert np.all(pos[:, 0] == 10) and sorted(pos[:, 1]) == [2, 3, 4]


class TestState:
    def test_initial_state(self):
        pb = build_problem({"preset": "lbracket2d", "mesh": {"nelx": 10, "nely": 10}})
        st = initialize_state(pb.mesh, pb.config, 3)
        st.check(pb.mesh, pb.config.K)
        active = pb.mesh.domain_mask
        assert np.all(st.rho[active] == pb.config.vol_limit) and np.all(st.rho[~active] == 0)
        np.testing.assert_allclose(st.memberships[active].sum(axis=1), 1.0)
        assert np.all(st.orientation_vars[:, 1] == 1.0) and np.all(st.orientation_vars[:, 2] == 0.0)

    def test_seed_controls_orientation(self):
        pb = build_problem({"preset": "bridge2d", "mesh": {"nelx": 8, "nely": 4}})
        a = initialize_state(pb.mesh, pb.config, 1).orientation_vars
        b = initialize_state(pb.mesh, pb.config, 1).orientation_vars
        c = initialize_state(pb.mesh, pb.config, 2).orientation_vars
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_clamp_and_serialise(self):
        mesh = Mesh(2, 2, 2, domain_mask=[1, 1, 1, 0])
        st = DesignState(np.array([1.5, -0.2, 0.5, 0.7]), np.full((4, 2), 2.0), np.full((2, 6), 3.0))
        st.clamp(mesh)
        assert st.rho.tolist() == [1.0, 0.0, 0.5, 0.0]
        assert st.memberships[3].tolist() == [0.0, 0.0]
        back = DesignState.from_dict(json.loads(json.dumps(st.to_dict())))
        np.testing.assert_array_equal(back.orientation_vars, st.orientation_vars)
        with pytest.raises(ValueError):
            back.check(mesh, 3)

    def test_free_slots(self):
        assert free_orientation_slots(2) == (0, 3)
        assert free_orientation_slots(3) == tuple(range(6))
