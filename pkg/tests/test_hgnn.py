import numpy as np
import pytest

import morphgnn.numcore as nc
from morphgnn import hgnn, morphology as M
from conftest import finite_diff_grad, rel_err


def random_sample(graph, cfg, rng):
    return hgnn.GraphSample(
        {n.id: rng.standard_normal(cfg.input_dims[n.node_type]) for n in graph.nodes},
        np.zeros(len(graph.foot_order)))


TABLE_ROWS = [  # (layers, hidden, expected float count), contact task
    (4, 5, 11_627), (4, 10, 25_252), (4, 25, 78_127), (4, 50, 206_252),
    (4, 128, 927_362), (4, 256, 3_165_442),
    (8, 50, 307_252), (8, 128, 1_585_282), (8, 256, 5_792_002),
    (12, 50, 408_252), (12, 128, 2_243_202), (12, 256, 8_418_562),
]


class TestCountParams:
    @pytest.mark.parametrize("layers,hidden,expected", TABLE_ROWS)
    def test_contact_grid(self, quad_graph, layers, hidden, expected):
        cfg = hgnn.HgnnConfig.for_task("contact", hidden, layers)
        assert hgnn.count_params(quad_graph, cfg) == expected

    def test_grf_reference(self, quad_graph):
        cfg = hgnn.HgnnConfig.for_task("grf", 128, 8)
        assert hgnn.count_params(quad_graph, cfg) == 1_489_281

    @pytest.mark.parametrize("task,hidden,layers", [
        ("contact", 5, 4), ("contact", 25, 4), ("contact", 50, 8), ("grf", 16, 3)])
    def test_equals_stored_floats(self, quad_graph, task, hidden, layers):
        cfg = hgnn.HgnnConfig.for_task(task, hidden, layers, seed=9)
        model = hgnn.init_model(quad_graph, cfg)
        assert model.num_floats() == hgnn.count_params(quad_graph, cfg)

    def test_single_joint_arm_has_four_relations(self):
        text = """
        <robot name="one">
          <link name="base"/><link name="arm"/><link name="tip"/>
          <joint name="j" type="revolute">
            <parent link="base"/><child link="arm"/><axis xyz="0 1 0"/>
          </joint>
          <joint name="tipj" type="fixed">
            <parent link="arm"/><child link="tip"/><origin xyz="0.3 0 0"/>
          </joint>
        </robot>"""
        g = M.build_graph(M.parse_urdf(text))
        assert g.relations() == [("B", "J"), ("F", "J"), ("J", "B"), ("J", "F")]
        cfg = hgnn.HgnnConfig.for_task("contact", 7, 2)
        model = hgnn.init_model(g, cfg)
        assert len([k for k in model.params if k.startswith("mp.0.")]) == 3 * 4
        assert model.num_floats() == hgnn.count_params(g, cfg)


class TestInit:
    def test_same_seed_bit_identical(self, quad_graph):
        cfg = hgnn.HgnnConfig.for_task("contact", 12, 3, seed=4)
        a, b = hgnn.init_model(quad_graph, cfg), hgnn.init_model(quad_graph, cfg)
        assert a.params.keys() == b.params.keys()
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_relation_groups_per_layer(self, quad_graph):
        model = hgnn.init_model(quad_graph, hgnn.HgnnConfig.for_task("contact", 4, 2))
        layer0 = {k for k in model.params if k.startswith("mp.0.")}
        assert len(layer0) == 3 * 5  # {W1, W2, b} per relation

    def test_bounds(self, quad_graph):
        model = hgnn.init_model(quad_graph, hgnn.HgnnConfig.for_task("contact", 16, 2))
        w = model.params["mp.0.B>J.W1"].data
        assert np.abs(w).max() <= 1.0 / 4.0


class TestForward:
    def test_all_zero(self, quad_graph):
        cfg = hgnn.HgnnConfig.for_task("contact", 6, 2)
        model = hgnn.init_model(quad_graph, cfg)
        for p in model.params.values():
            p.data[:] = 0.0
        sample = hgnn.GraphSample(
            {n.id: np.zeros(cfg.input_dims[n.node_type]) for n in quad_graph.nodes},
            np.zeros(4))
        assert np.array_equal(hgnn.forward(model, sample), np.zeros((4, 2)))

    def test_pure_function(self, quad_graph):
        rng = np.random.default_rng(0)
        cfg = hgnn.HgnnConfig.for_task("contact", 9, 3, seed=2)
        model = hgnn.init_model(quad_graph, cfg)
        s = random_sample(quad_graph, cfg, rng)
        assert np.array_equal(hgnn.forward(model, s), hgnn.forward(model, s))

    def test_locality(self, quad_graph):
        # base-to-foot distance is 4 edges on this fixture; with fewer
        # message-passing rounds a base perturbation cannot reach the feet
        rng = np.random.default_rng(1)
        base_id = quad_graph.base_id()
        for n_m, reaches in [(2, False), (3, False), (4, True)]:
            cfg = hgnn.HgnnConfig.for_task("contact", 8, n_m, seed=3)
            model = hgnn.init_model(quad_graph, cfg)
            s = random_sample(quad_graph, cfg, rng)
            perturbed = hgnn.GraphSample(
                {k: (v + 10.0 if k == base_id else v) for k, v in s.inputs.items()},
                s.labels)
            same = np.array_equal(hgnn.forward(model, s), hgnn.forward(model, perturbed))
            assert same != reaches

    def test_leg_equivariance(self, quad_graph):
        rng = np.random.default_rng(2)
        cfg = hgnn.HgnnConfig.for_task("contact", 10, 3, seed=5)
        pos = {f: i for i, f in enumerate(quad_graph.foot_order)}
        autos = M.leg_automorphisms(quad_graph)
        for trial in range(3):
            model = hgnn.init_model(quad_graph, hgnn.HgnnConfig.for_task(
                "contact", 10, 3, seed=trial))
            s = random_sample(quad_graph, cfg, rng)
            y = hgnn.forward(model, s)
            for perm in autos:
                permuted = hgnn.GraphSample(
                    {perm[i]: v for i, v in s.inputs.items()}, s.labels)
                yp = hgnn.forward(model, permuted)
                for f in quad_graph.foot_order:
                    assert np.abs(yp[pos[perm[f]]] - y[pos[f]]).max() < 1e-10

    def test_batch_of_one_equivalence(self, quad_graph):
        rng = np.random.default_rng(3)
        cfg = hgnn.HgnnConfig.for_task("grf", 7, 2, seed=6)
        model = hgnn.init_model(quad_graph, cfg)
        samples = [random_sample(quad_graph, cfg, rng) for _ in range(6)]
        batched = hgnn.forward_batch(model, samples)
        singles = np.stack([hgnn.forward(model, s) for s in samples])
        assert np.abs(batched - singles).max() <= 1e-12

    def test_full_model_gradcheck(self, quad_graph):
        # gradient of the foot-output sum wrt every parameter vs central FD
        rng = np.random.default_rng(4)
        cfg = hgnn.HgnnConfig(4, 2, "contact", {"B": 5, "J": 4, "F": 5}, 2, 7)
        model = hgnn.init_model(quad_graph, cfg)
        s = random_sample(quad_graph, cfg, rng)
        xs = hgnn.sample_type_arrays(model, [s])

        def scalar():
            return hgnn.forward_tensor(model, xs, 1).data.sum()

        loss = nc.sum_all(hgnn.forward_tensor(model, xs, 1))
        nc.backward(loss)
        for key, p in model.params.items():
            fd = finite_diff_grad(scalar, p)
            assert rel_err(p.grad, fd) < 1e-4, key


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, quad_graph, tmp_path):
        model = hgnn.init_model(quad_graph, hgnn.HgnnConfig.for_task("contact", 11, 2, seed=8))
        path = str(tmp_path / "ckpt.json")
        hgnn.save_checkpoint(model, path)
        loaded = hgnn.load_checkpoint(path, quad_graph)
        assert loaded.cfg == model.cfg
        for k in model.params:
            assert np.array_equal(loaded.params[k].data, model.params[k].data)

    def test_fingerprint_mismatch(self, quad_graph, serial_arm, tmp_path):
        model = hgnn.init_model(quad_graph, hgnn.HgnnConfig.for_task("contact", 5, 2))
        path = str(tmp_path / "ckpt.json")
        hgnn.save_checkpoint(model, path)
        other = M.build_graph(serial_arm)
        with pytest.raises(ValueError, match="different morphology graph"):
            hgnn.load_checkpoint(path, other)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            hgnn.HgnnConfig.for_task("contact", 0, 4)
        with pytest.raises(ValueError):
            hgnn.HgnnConfig.for_task("nonsense", 8, 2)
        with pytest.raises(ValueError):
            hgnn.HgnnConfig(8, 2, "contact", {"B": 1, "J": 1}, 2)

    def test_standard_dims(self):
        c = hgnn.HgnnConfig.for_task("contact")
        assert (c.input_dims, c.output_dim) == ({"B": 900, "J": 300, "F": 900}, 2)
        g = hgnn.HgnnConfig.for_task("grf")
        assert (g.input_dims, g.output_dim) == ({"B": 900, "J": 450, "F": 1}, 1)
