import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinymol import chem
from tinymol.chem.graph import AROMATIC, Atom, Bond, MolecularGraph

FIXTURES = [
    "C", "CC", "CCC", "CCO", "CCN", "COC", "CO", "C=C", "C#N", "CC#N",
    "C=O", "CC=O", "CC(=O)O", "CC(C)C", "CC(C)O", "CCCl", "CCBr", "CCF",
    "CCI", "c1ccccc1", "Cc1ccccc1", "c1ccncc1", "c1ccoc1", "c1ccsc1",
    "NCCO", "OCC(O)CO", "CN(C)C", "O=C=O", "OB(O)O", "CP", "CS",
    "[NH4+]", "[O-]C(=O)C", "C%10CCCC%10",
]


def reorder(graph, perm):
    inverse = {old: new for new, old in enumerate(perm)}
    atoms = [graph.atoms[old] for old in perm]
    bonds = [Bond(inverse[b.a], inverse[b.b], b.order) for b in graph.bonds]
    return MolecularGraph(atoms, bonds, graph.source)


class TestParse:
    def test_single_carbon(self):
        g = chem.parse_smiles("C")
        assert len(g.atoms) == 1 and not g.bonds
        assert chem.implicit_hydrogens(g, 0) == 4

    def test_unbalanced_paren_offset(self):
        with pytest.raises(chem.UnbalancedParenthesis) as exc:
            chem.parse_smiles("C(")
        assert exc.value.offset == 1

    def test_benzene_hand_parse(self):
        g = chem.parse_smiles("c1ccccc1")
        assert len(g.atoms) == 6
        assert all(a.element == "C" and a.aromatic for a in g.atoms)
        assert len(g.bonds) == 6
        assert all(b.order == AROMATIC for b in g.bonds)
        # one ring: every atom has exactly two neighbors
        assert all(g.degree(i) == 2 for i in range(6))
        assert all(chem.implicit_hydrogens(g, i) == 1 for i in range(6))

    def test_unclosed_ring(self):
        with pytest.raises(chem.UnclosedRing) as exc:
            chem.parse_smiles("C1CC")
        assert exc.value.offset == 1

    def test_unknown_symbol(self):
        with pytest.raises(chem.UnknownAtomSymbol) as exc:
            chem.parse_smiles("CXC")
        assert exc.value.offset == 1

    def test_pentavalent_carbon(self):
        with pytest.raises(chem.ValenceViolation):
            chem.parse_smiles("C(C)(C)(C)(C)C")

    def test_bracket_atoms(self):
        g = chem.parse_smiles("[NH4+]")
        atom = g.atoms[0]
        assert atom == Atom("N", 1, 4, False)
        g = chem.parse_smiles("[O-]C")
        assert g.atoms[0].charge == -1

    def test_percent_ring_closure(self):
        g = chem.parse_smiles("C%10CCCC%10")
        assert len(g.bonds) == 5

    def test_biphenyl_link_is_single(self):
        g = chem.parse_smiles("c1ccccc1c1ccccc1")
        singles = [b for b in g.bonds if b.order == 1]
        assert len(singles) == 1
        assert len([b for b in g.bonds if b.order == AROMATIC]) == 12

    def test_aromatic_atom_outside_ring_rejected(self):
        for text in ("cc", "no", "c"):
            assert not chem.check_validity(text)

    def test_ring_self_bond_rejected(self):
        with pytest.raises(chem.UnclosedRing):
            chem.parse_smiles("C11")

    def test_duplicate_ring_bond_rejected(self):
        with pytest.raises(chem.UnclosedRing):
            chem.parse_smiles("C1C1")


class TestValidity:
    def test_examples(self):
        assert chem.check_validity("CCO")
        assert not chem.check_validity("C(")
        assert not chem.check_validity("C(C)(C)(C)(C)C")

    def test_empty_and_garbage(self):
        assert not chem.check_validity("")
        assert not chem.check_validity("hello world")


class TestWrite:
    def test_methane(self):
        assert chem.write_smiles(chem.parse_smiles("C")) == "C"

    def test_ethanol_reparse(self):
        out = chem.parse_smiles(chem.write_smiles(chem.parse_smiles("CCO")))
        elements = sorted(a.element for a in out.atoms)
        assert elements == ["C", "C", "O"]
        assert len(out.bonds) == 2
        assert all(b.order == 1 for b in out.bonds)

    @pytest.mark.parametrize("text", FIXTURES)
    def test_roundtrip_isomorphic(self, text):
        g = chem.parse_smiles(text)
        again = chem.parse_smiles(chem.write_smiles(g))
        assert chem.graphs_isomorphic(g, again)

    @pytest.mark.parametrize("text", FIXTURES)
    def test_double_roundtrip_stable(self, text):
        g = chem.parse_smiles(text)
        once = chem.parse_smiles(chem.write_smiles(g))
        twice = chem.parse_smiles(chem.write_smiles(once))
        assert chem.graphs_isomorphic(once, twice)


class TestConformer:
    def test_single_atom_at_origin(self):
        conf = chem.assign_conformer(chem.parse_smiles("C"), seed=5)
        np.testing.assert_array_equal(conf.coordinates, np.zeros((1, 3)))

    def test_bonded_pair_rest_length(self):
        conf = chem.assign_conformer(chem.parse_smiles("CC"), seed=3)
        dist = np.linalg.norm(conf.coordinates[0] - conf.coordinates[1])
        assert abs(dist - 1.5) < 1e-3

    @pytest.mark.parametrize("text", FIXTURES[:12])
    def test_deterministic_and_centered(self, text):
        g = chem.parse_smiles(text)
        a = chem.assign_conformer(g, seed=17)
        b = chem.assign_conformer(g, seed=17)
        np.testing.assert_array_equal(a.coordinates, b.coordinates)
        assert np.abs(a.coordinates.mean(axis=0)).max() < 1e-9

    def test_seed_changes_layout(self):
        g = chem.parse_smiles("CCO")
        a = chem.assign_conformer(g, seed=1)
        b = chem.assign_conformer(g, seed=2)
        assert not np.array_equal(a.coordinates, b.coordinates)


def brute_force_path_strings(graph, max_path=7):
    """Oracle: enumerate every simple path by checking all atom tuples."""
    n = len(graph.atoms)
    bonded = {b.key() for b in graph.bonds}
    found = set()
    for length in range(0, max_path + 1):
        for seq in itertools.permutations(range(n), length + 1):
            if all((min(a, b), max(a, b)) in bonded for a, b in zip(seq, seq[1:])):
                found.add(chem.path_string(graph, list(seq)))
    return found


class TestFingerprint:
    def test_methane_single_bit(self):
        fp = chem.path_fingerprint(chem.parse_smiles("C"))
        assert fp.count() == 1
        assert fp.bits >> chem.fingerprint.string_bit("C") == 1

    def test_ethane_two_bits(self):
        fp = chem.path_fingerprint(chem.parse_smiles("CC"))
        expected = {chem.fingerprint.string_bit("C"), chem.fingerprint.string_bit("C-C")}
        assert fp.count() == 2
        assert {i for i in range(fp.width) if fp.bits >> i & 1} == expected

    @pytest.mark.parametrize("text", [t for t in FIXTURES
                                      if len(chem.parse_smiles(t)) <= 8])
    def test_matches_brute_force_oracle(self, text):
        g = chem.parse_smiles(text)
        fp = chem.path_fingerprint(g)
        oracle_bits = 0
        for s in brute_force_path_strings(g):
            oracle_bits |= 1 << chem.fingerprint.string_bit(s)
        assert fp.bits == oracle_bits

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(FIXTURES), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, text, pyrandom):
        g = chem.parse_smiles(text)
        perm = list(range(len(g)))
        pyrandom.shuffle(perm)
        shuffled = reorder(g, perm)
        assert chem.path_fingerprint(g) == chem.path_fingerprint(shuffled)

    def test_nonempty_molecule_sets_a_bit(self):
        for text in FIXTURES:
            assert chem.path_fingerprint(chem.parse_smiles(text)).count() >= 1


class TestTanimoto:
    def test_identity_and_bounds(self):
        for text in FIXTURES[:8]:
            fp = chem.path_fingerprint(chem.parse_smiles(text))
            assert chem.tanimoto(fp, fp) == 1.0

    def test_two_thirds_case(self):
        a = chem.path_fingerprint(chem.parse_smiles("CC"))
        b = chem.path_fingerprint(chem.parse_smiles("CCC"))
        assert abs(chem.tanimoto(a, b) - 2.0 / 3.0) < 1e-12

    def test_disjoint_is_zero(self):
        a = chem.Fingerprint(0b0011)
        b = chem.Fingerprint(0b1100)
        assert chem.tanimoto(a, b) == 0.0

    def test_both_empty_is_one(self):
        assert chem.tanimoto(chem.Fingerprint(0), chem.Fingerprint(0)) == 1.0

    def test_width_mismatch(self):
        with pytest.raises(chem.WidthMismatch):
            chem.tanimoto(chem.Fingerprint(1, width=64), chem.Fingerprint(1, width=128))

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from(FIXTURES), st.sampled_from(FIXTURES))
    def test_symmetric_and_bounded(self, ta, tb):
        a = chem.path_fingerprint(chem.parse_smiles(ta))
        b = chem.path_fingerprint(chem.parse_smiles(tb))
        assert chem.tanimoto(a, b) == chem.tanimoto(b, a)
        assert 0.0 <= chem.tanimoto(a, b) <= 1.0
