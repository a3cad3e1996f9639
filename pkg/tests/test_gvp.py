import numpy as np
import pytest

from tinymol import autograd as ag
from tinymol import chem, gvp
from tinymol.rng import Rng

MOLECULES = ["C", "CC", "CCO", "CCN", "c1ccccc1", "CC(=O)O", "C=C", "C#N",
             "c1ccncc1", "COC", "CC(C)O", "NCCO"]


def random_rotation(rng):
    a = rng.normal((3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="module")
def params():
    return gvp.init_gvp_params(gvp.GvpConfig(), Rng(42))


class TestLayer:
    def test_zero_vectors_stay_zero(self):
        p = gvp.GvpLayerParams(
            w_v=ag.tensor(np.eye(2)),
            w_s=ag.tensor(np.ones((3, 5))),
            b_s=ag.tensor(np.zeros(3)),
        )
        s = ag.tensor(np.ones((4, 3)))
        v = ag.tensor(np.zeros((4, 2, 3)))
        s2, v2 = gvp.gvp_layer(s, v, p)
        np.testing.assert_array_equal(v2.data, np.zeros((4, 2, 3)))
        expected = np.maximum(np.ones((4, 5)) @ np.ones((3, 5)).T, 0)
        # norms of zero vectors contribute zeros to the concat input
        expected = np.maximum(
            np.concatenate([np.ones((4, 3)), np.zeros((4, 2))], axis=1)
            @ np.ones((3, 5)).T, 0)
        np.testing.assert_allclose(s2.data, expected)

    def test_hand_worked_instance(self):
        p = gvp.GvpLayerParams(
            w_v=ag.tensor([[1.0]]),
            w_s=ag.tensor([[1.0, 1.0]]),
            b_s=ag.tensor([0.0]),
            scalar_act="identity",
            gate_act="one",
        )
        s = ag.tensor([[2.0]])
        v = ag.tensor([[[3.0, 4.0, 0.0]]])
        s2, v2 = gvp.gvp_layer(s, v, p)
        np.testing.assert_allclose(s2.data, [[7.0]])  # 2 + row norm 5
        np.testing.assert_allclose(v2.data, [[[3.0, 4.0, 0.0]]])

    def test_rotation_equivariance_single_layer(self):
        rng = Rng(3)
        p = gvp.GvpLayerParams(
            w_v=ag.param(rng.normal((4, 4))),
            w_s=ag.param(rng.normal((6, 10))),
            b_s=ag.param(rng.normal((6,))),
        )
        s = ag.tensor(rng.normal((5, 6)))
        v = ag.tensor(rng.normal((5, 4, 3)))
        rot = random_rotation(rng.split("rot"))
        s_out, v_out = gvp.gvp_layer(s, v, p)
        s_rot, v_rot = gvp.gvp_layer(s, ag.tensor(v.data @ rot.T), p)
        np.testing.assert_allclose(s_rot.data, s_out.data, atol=1e-12)
        np.testing.assert_allclose(v_rot.data, v_out.data @ rot.T, atol=1e-12)

    def test_shape_mismatch(self):
        p = gvp.GvpLayerParams(
            w_v=ag.tensor(np.eye(3)),
            w_s=ag.tensor(np.ones((2, 4))),
            b_s=ag.tensor(np.zeros(2)),
        )
        with pytest.raises(ag.ShapeMismatch):
            gvp.gvp_layer(ag.tensor(np.ones((4, 2))), ag.tensor(np.zeros((4, 2, 3))), p)


class TestMessagePassing:
    def test_single_atom_vectors_zero(self, params):
        g = chem.parse_smiles("C")
        conf = chem.assign_conformer(g, 0)
        _, vectors = gvp.gvp_message_pass(g, conf, params)
        np.testing.assert_array_equal(vectors.data, np.zeros(vectors.shape))

    def test_translation_invariance(self, params):
        g = chem.parse_smiles("CCO")
        conf = chem.assign_conformer(g, 1)
        shifted = chem.Conformer(conf.coordinates + np.array([5.0, -2.0, 9.0]), 1)
        s1, v1 = gvp.gvp_message_pass(g, conf, params)
        s2, v2 = gvp.gvp_message_pass(g, shifted, params)
        np.testing.assert_allclose(s2.data, s1.data, atol=1e-9)
        np.testing.assert_allclose(v2.data, v1.data, atol=1e-9)

    def test_rotation_behavior(self, params):
        g = chem.parse_smiles("CC(=O)O")
        conf = chem.assign_conformer(g, 2)
        rot = random_rotation(Rng(9))
        rotated = chem.Conformer(conf.coordinates @ rot.T, 2)
        s1, v1 = gvp.gvp_message_pass(g, conf, params)
        s2, v2 = gvp.gvp_message_pass(g, rotated, params)
        np.testing.assert_allclose(s2.data, s1.data, atol=1e-9)
        np.testing.assert_allclose(v2.data, v1.data @ rot.T, atol=1e-9)

    def test_conformer_mismatch(self, params):
        g = chem.parse_smiles("CC")
        bad = chem.Conformer(np.zeros((3, 3)), 0)
        with pytest.raises(gvp.ConformerMismatch):
            gvp.gvp_message_pass(g, bad, params)


class TestPooling:
    def test_single_node(self):
        s = ag.tensor([[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(gvp.pool_graph(s).data, [[1.0, 2.0, 3.0]])

    def test_two_node_mean(self):
        s = ag.tensor([[1.0, 3.0], [3.0, 1.0]])
        np.testing.assert_allclose(gvp.pool_graph(s).data, [[2.0, 2.0]])

    def test_empty_graph(self):
        with pytest.raises(gvp.EmptyGraph):
            gvp.pool_graph(ag.tensor(np.zeros((0, 4))))


class TestAdapter:
    def test_zero_weights_pass_bias(self):
        cfg = gvp.GvpConfig(scalar_width=4, vector_width=2,
                            adapter_hidden=3, out_width=2)
        p = gvp.init_gvp_params(cfg, Rng(0))
        p.adapter_w1.data[:] = 0.0
        p.adapter_w2.data[:] = 0.0
        p.adapter_b2.data[:] = [0.5, -1.5]
        out = gvp.project_adapter(ag.tensor(np.ones((1, 4))), p)
        np.testing.assert_allclose(out.data, [[0.5, -1.5]])

    def test_hand_arithmetic_2_3_2(self):
        rng = Rng(5)
        cfg = gvp.GvpConfig(scalar_width=2, vector_width=1,
                            adapter_hidden=3, out_width=2)
        p = gvp.init_gvp_params(cfg, rng)
        h = rng.normal((1, 2))
        expected = np.maximum(h @ p.adapter_w1.data.T + p.adapter_b1.data, 0)
        expected = expected @ p.adapter_w2.data.T + p.adapter_b2.data
        np.testing.assert_allclose(gvp.project_adapter(ag.tensor(h), p).data, expected)


class TestInvariants:
    def test_se3_invariance_of_pooled_embedding(self, params):
        rng = Rng(2024)
        for text in MOLECULES[:6]:
            g = chem.parse_smiles(text)
            conf = chem.assign_conformer(g, 7)
            base, _ = gvp.encode_molecule(g, conf, params)
            for k in range(5):
                rot = random_rotation(rng.split(f"{text}/{k}"))
                shift = rng.split(f"t/{text}/{k}").normal((3,), scale=4.0)
                moved = chem.Conformer(conf.coordinates @ rot.T + shift, 7)
                h, _ = gvp.encode_molecule(g, moved, params)
                assert np.abs(h.data - base.data).max() < 1e-9

    def test_permutation_invariance(self, params):
        from test_chem import reorder
        rng = Rng(77)
        for text in ("CCO", "c1ccccc1", "CC(=O)O"):
            g = chem.parse_smiles(text)
            conf = chem.assign_conformer(g, 3)
            base, _ = gvp.encode_molecule(g, conf, params)
            perm = list(rng.permutation(len(g)))
            g2 = reorder(g, perm)
            conf2 = chem.Conformer(conf.coordinates[perm], 3)
            h, _ = gvp.encode_molecule(g2, conf2, params)
            assert np.abs(h.data - base.data).max() < 1e-12

    def test_batch_encode_matches_single(self, params):
        graphs = [chem.parse_smiles(t) for t in MOLECULES[:5]]
        confs = [chem.assign_conformer(g, 11) for g in graphs]
        pooled, adapted = gvp.encode_molecules(graphs, confs, params)
        for i, (g, c) in enumerate(zip(graphs, confs)):
            h, m = gvp.encode_molecule(g, c, params)
            np.testing.assert_allclose(pooled.data[i], h.data[0], atol=1e-12)
            np.testing.assert_allclose(adapted.data[i], m.data[0], atol=1e-12)

    def test_gradients_match_finite_differences(self):
        cfg = gvp.GvpConfig(scalar_width=5, vector_width=2, layers=2,
                            adapter_hidden=4, out_width=3)
        params = gvp.init_gvp_params(cfg, Rng(13))
        g = chem.parse_smiles("CCO")
        conf = chem.assign_conformer(g, 1)
        target = Rng(14).normal((1, 3))

        def f():
            _, adapted = gvp.encode_molecule(g, conf, params)
            return ag.mse(adapted, ag.tensor(target))

        tensors = [t for _, t in params.named()]
        assert ag.finite_diff_check(f, tensors) < 1e-4
