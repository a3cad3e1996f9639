import numpy as np
import pytest

from tinymol import autograd as ag
from tinymol import reaction as rxn
from tinymol.rng import Rng


@pytest.fixture(scope="module")
def params():
    cfg = rxn.ReactionConfig(d_token=16, d_geo=6, layers=2, heads=2)
    return rxn.init_reaction_params(cfg, Rng(0))


@pytest.fixture(scope="module")
def normalizer():
    return rxn.AmountNormalizer(np.zeros(5), np.ones(5))


def make_embed(d_geo=6):
    cache = {}

    def embed(smiles):
        if smiles not in cache:
            cache[smiles] = ag.tensor(Rng(hash(smiles) % 2**32).normal((1, d_geo)))
        return cache[smiles]

    return embed


def record(yield_percent=None, solvent_amt=None):
    mols = [
        rxn.ReactionMolecule("CCO", "reactant", {"moles": 1.0}),
        rxn.ReactionMolecule("CC(=O)O", "reactant", {"moles": 1.2, "equivalents": 1.2}),
        rxn.ReactionMolecule("Cl", "catalyst", {}),
        rxn.ReactionMolecule("CCOC(C)=O", "product",
                             {} if solvent_amt is None else {"mass": solvent_amt}),
    ]
    return rxn.ReactionRecord(mols, yield_percent)


class TestAmounts:
    def test_vector_masks(self, normalizer):
        vec = normalizer.vector({"moles": 2.0, "volume": 5.0})
        assert vec.values == (2.0, 0.0, 5.0, 0.0, 0.0)
        assert vec.masks == (1.0, 0.0, 1.0, 0.0, 0.0)

    def test_zero_where_missing_enforced(self):
        with pytest.raises(Exception):
            rxn.AmountVector((1.0, 0, 0, 0, 0), (0.0, 0, 0, 0, 0))

    def test_fit_normalizes(self):
        records = [record(), record()]
        norm = rxn.AmountNormalizer.fit(records)
        vec = norm.vector({"moles": 1.1})
        assert abs(vec.values[0]) < 2.0


class TestToken:
    def test_zero_everything_gives_zero_token(self, params, normalizer):
        p = params
        saved = (p.role_emb.data.copy(), p.type_emb.data.copy())
        p.role_emb.data[:] = 0.0
        p.type_emb.data[:] = 0.0
        vec = normalizer.vector({})
        token = rxn.build_reaction_token(np.zeros((1, 6)), vec, "reactant",
                                         rxn.OBSERVED, p)
        np.testing.assert_array_equal(token.data, np.zeros((1, 16)))
        p.role_emb.data[:], p.type_emb.data[:] = saved

    def test_masked_target_drops_geometry_term(self, params, normalizer):
        vec = normalizer.vector({"moles": 1.0})
        with_none = rxn.build_reaction_token(None, vec, "product", rxn.MASKED, params)
        with_zero = rxn.build_reaction_token(np.zeros((1, 6)), vec, "product",
                                             rxn.MASKED, params)
        np.testing.assert_allclose(with_none.data, with_zero.data, atol=1e-15)

    def test_hand_additivity(self, normalizer):
        cfg = rxn.ReactionConfig(d_token=2, d_geo=2, layers=1, heads=1)
        p = rxn.init_reaction_params(cfg, Rng(1))
        p.mol_proj.data[:] = np.eye(2)
        p.amt_proj.data[:] = 0.0
        p.amt_proj.data[0, 0] = 1.0  # token[0] += moles value
        p.role_emb.data[:] = 0.0
        p.role_emb.data[rxn.ROLES.index("reagent")] = [10.0, 20.0]
        p.type_emb.data[:] = 0.0
        p.type_emb.data[rxn.OBSERVED] = [1.0, 2.0]
        vec = normalizer.vector({"moles": 3.0})
        token = rxn.build_reaction_token(np.array([[5.0, 7.0]]), vec, "reagent",
                                         rxn.OBSERVED, p)
        np.testing.assert_allclose(token.data, [[5 + 3 + 10 + 1, 7 + 20 + 2]])

    def test_unknown_role(self, params, normalizer):
        with pytest.raises(rxn.UnknownRole):
            rxn.build_reaction_token(None, normalizer.vector({}), "spectator",
                                     rxn.OBSERVED, params)


class TestEncode:
    def test_row_count(self, params, normalizer):
        rec = record()
        states, cls_state = rxn.encode_reaction(rec, set(), params, make_embed(),
                                                normalizer)
        assert len(states) == len(rec.molecules)
        assert cls_state.shape == (1, 16)

    def test_permutation_invariance_bit_exact(self, params, normalizer):
        embed = make_embed()
        rec = record(yield_percent=50.0)
        _, cls_a = rxn.encode_reaction(rec, set(), params, embed, normalizer)
        swapped = rxn.ReactionRecord(
            [rec.molecules[1], rec.molecules[0]] + rec.molecules[2:], 50.0)
        _, cls_b = rxn.encode_reaction(swapped, set(), params, embed, normalizer)
        np.testing.assert_array_equal(cls_a.data, cls_b.data)
        ya = rxn.predict_yield(cls_a, params)
        yb = rxn.predict_yield(cls_b, params)
        assert ya.regression == yb.regression
        np.testing.assert_array_equal(ya.bin_probs, yb.bin_probs)

    def test_masked_content_never_influences_outputs(self, params, normalizer):
        embed = make_embed()
        rec_a = record(yield_percent=None)
        rec_b = record(yield_percent=None)
        rec_b.molecules[3] = rxn.ReactionMolecule("c1ccccc1", "product", {})
        mask = {3}
        states_a, cls_a = rxn.encode_reaction(rec_a, mask, params, embed, normalizer)
        states_b, cls_b = rxn.encode_reaction(rec_b, mask, params, embed, normalizer)
        np.testing.assert_array_equal(cls_a.data, cls_b.data)
        for idx in states_a:
            np.testing.assert_array_equal(states_a[idx].data, states_b[idx].data)

    def test_mask_index_out_of_range(self, params, normalizer):
        with pytest.raises(rxn.IndexOutOfRange):
            rxn.encode_reaction(record(), {9}, params, make_embed(), normalizer)


class TestMaskedPrediction:
    def test_output_width(self, params, normalizer):
        out = rxn.predict_masked_molecule(record(), {3}, params, make_embed(),
                                          normalizer)
        assert out[3].shape == (1, 6)

    def test_empty_mask(self, params, normalizer):
        with pytest.raises(rxn.EmptyMask):
            rxn.predict_masked_molecule(record(), set(), params, make_embed(),
                                        normalizer)


class TestRetrieve:
    def test_exact_match(self):
        lib = [("A", np.array([1.0, 0.0])), ("B", np.array([0.0, 1.0]))]
        assert rxn.retrieve_nearest(np.array([0.0, 2.0]), lib) == "B"

    def test_single_entry(self):
        lib = [("only", np.array([1.0, 1.0]))]
        assert rxn.retrieve_nearest(np.array([-5.0, 0.1]), lib) == "only"

    def test_tie_breaks_to_lowest_index(self):
        v = np.array([1.0, 0.0])
        lib = [("zero", -v), ("left", v), ("mid", -v), ("right", v)]
        assert rxn.retrieve_nearest(v, lib) == "left"

    def test_empty_library(self):
        with pytest.raises(rxn.EmptyLibrary):
            rxn.retrieve_nearest(np.zeros(2), [])


class TestYield:
    def test_probs_sum_to_one(self, params):
        pred = rxn.predict_yield(ag.tensor(Rng(5).normal((1, 16))), params)
        assert abs(pred.bin_probs.sum() - 1.0) < 1e-9

    def test_zero_weights_give_midpoint_and_uniform(self):
        cfg = rxn.ReactionConfig(d_token=8, d_geo=4, layers=1, heads=1)
        p = rxn.init_reaction_params(cfg, Rng(2))
        p.reg_w.data[:] = 0.0
        p.reg_b.data[:] = 0.0
        p.cls_w.data[:] = 0.0
        p.cls_b.data[:] = 0.0
        pred = rxn.predict_yield(ag.tensor(np.ones((1, 8))), p)
        assert pred.regression == 0.5
        np.testing.assert_allclose(pred.bin_probs, np.full(10, 0.1))

    def test_bin_yield_edges(self):
        assert rxn.bin_yield(0.0) == 0
        assert rxn.bin_yield(100.0) == 9
        assert rxn.bin_yield(57.60) == 5
        with pytest.raises(rxn.OutOfRange):
            rxn.bin_yield(101.0)


class TestLoss:
    def test_no_yield_labels_contribute_zero(self, params, normalizer):
        batch = [(record(yield_percent=None), {3})]
        base = rxn.reaction_loss(batch, params, make_embed(), normalizer)
        weights = rxn.ReactionLossWeights(yield_=123.0)
        boosted = rxn.reaction_loss(batch, params, make_embed(), normalizer, weights)
        assert base.item() == boosted.item()

    def test_zero_weights_zero_loss(self, params, normalizer):
        weights = rxn.ReactionLossWeights(emb=0.0, amt=0.0, yield_=0.0)
        batch = [(record(yield_percent=60.0), {3})]
        loss = rxn.reaction_loss(batch, params, make_embed(), normalizer, weights)
        assert loss.item() == 0.0

    def test_nonnegative(self, params, normalizer):
        batch = [(record(yield_percent=30.0), {0}),
                 (record(yield_percent=None), {3})]
        loss = rxn.reaction_loss(batch, params, make_embed(), normalizer)
        assert loss.item() >= 0.0

    def test_amount_mask_zeroes_value_gradient(self, normalizer):
        cfg = rxn.ReactionConfig(d_token=8, d_geo=4, layers=1, heads=1)
        p = rxn.init_reaction_params(cfg, Rng(3))
        value_channel = ag.param(np.array([[0.7, 0.0, 0.0, 0.0, 0.0]]))
        masks = np.array([[0.0, 1.0, 0.0, 0.0, 0.0]])  # channel 0 masked off

        def token_from_channels():
            masked_values = ag.mul(value_channel, ag.tensor(masks))
            amt_in = ag.concat([masked_values, ag.tensor(masks)], axis=1)
            return ag.matmul(amt_in, ag.transpose(p.amt_proj))

        with ag.Tape() as tape:
            loss = ag.sum_squares(token_from_channels())
        ag.backward(tape, loss)
        np.testing.assert_array_equal(value_channel.grad[0, 0], 0.0)

    def test_gradients_match_finite_differences(self, normalizer):
        cfg = rxn.ReactionConfig(d_token=8, d_geo=4, layers=1, heads=2)
        p = rxn.init_reaction_params(cfg, Rng(4))
        embed = make_embed(d_geo=4)
        batch = [(record(yield_percent=40.0), {3})]

        def f():
            return rxn.reaction_loss(batch, p, embed, normalizer)

        tensors = [t for _, t in p.named()]
        assert ag.finite_diff_check(f, tensors) < 1e-4

    def test_empty_batch(self, params, normalizer):
        with pytest.raises(rxn.EmptyBatch):
            rxn.reaction_loss([], params, make_embed(), normalizer)
