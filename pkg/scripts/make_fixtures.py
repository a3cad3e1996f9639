#!/usr/bin/env python3
"""Regenerate the committed fixture corpora deterministically."""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from tinymol import data
from tinymol.chem import check_validity
from tinymol.reaction import ReactionMolecule, ReactionRecord

ROOT = pathlib.Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"

MOLECULES = [
    "C", "CC", "CCC", "CCCC", "CCO", "CCN", "CO", "COC", "C=C", "C#N",
    "CC=O", "CC(=O)O", "CC(C)C", "CC(C)O", "CCCl", "CCBr", "CCF", "CCI",
    "c1ccccc1", "Cc1ccccc1", "c1ccncc1", "c1ccoc1", "c1ccsc1", "NCCO",
    "OCC(O)CO", "CN(C)C", "O=C=O", "OB(O)O", "CP", "CS", "CCOCC",
    "CCOC(C)=O", "COC(C)=O", "NCCN", "OCCO", "C=CC", "CC#N", "CCCO",
    "CNC", "ClCCl",
]

# 20 reactions with pairwise-distinct products for clean retrieval scoring.
REACTIONS = [
    (("CCO", {"moles": 1.0}), ("CC(=O)O", {"moles": 1.1, "equivalents": 1.1}),
     ("CS", "catalyst"), "CCOC(C)=O", 78.0),
    (("CO", {"moles": 0.8}), ("CC(=O)O", {"moles": 1.0}),
     ("CS", "catalyst"), "COC(C)=O", 64.5),
    (("CCO", {"moles": 2.0, "volume": 5.0}), ("CCBr", {"moles": 1.0}),
     ("O", "solvent"), "CCOCC", 52.0),
    (("CCN", {"moles": 1.0}), ("CCBr", {"mass": 10.9}),
     ("O", "solvent"), "NCCN" , 41.0),
    (("OCCO", {"moles": 1.0}), ("CC", {"moles": 0.4}),
     None, "OCC(O)CO", 35.5),
    (("C=C", {"moles": 1.5}), ("O", {"volume": 20.0}),
     ("CS", "catalyst"), "CCO", 88.0),
    (("C=CC", {"moles": 1.2}), ("O", {"volume": 18.0}),
     None, "CC(C)O", 73.0),
    (("CC=O", {"moles": 1.0}), ("O", {"volume": 3.0}),
     None, "CC(=O)O", 91.0),
    (("CCO", {"moles": 1.0}), ("Cl", {"moles": 1.3, "equivalents": 1.3}),
     None, "CCCl", 57.6),
    (("CCO", {"moles": 1.0}), ("CCN", {"moles": 1.0}),
     ("O", "solvent"), "NCCO", 29.0),
    (("CC", {"moles": 2.2}), ("C=C", {"moles": 1.0}),
     ("CS", "catalyst"), "CCCC", 48.0),
    (("C#N", {"moles": 1.0}), ("CC", {"moles": 1.0}),
     None, "CC#N", 66.0),
    (("CO", {"moles": 1.1}), ("CCN", {"moles": 1.0}),
     None, "CNC", 38.0),
    (("CO", {"moles": 2.0}), ("C=C", {"moles": 1.0}),
     ("CS", "catalyst"), "COC", 59.0),
    (("Cc1ccccc1", {"moles": 0.5}), ("O", {"volume": 12.0}),
     None, "c1ccccc1", 44.0),
    (("c1ccccc1", {"moles": 1.0}), ("CCCl", {"moles": 1.0}),
     ("CS", "catalyst"), "Cc1ccccc1", 71.5),
    (("CCC", {"moles": 1.0}), ("O", {"volume": 9.0}),
     None, "CCCO", 27.0),
    (("C=C", {"moles": 1.0}), ("C#N", {"moles": 1.0}),
     ("O", "solvent"), "C=CC", 33.0),
    (("CCO", {"moles": 1.4}), ("CO", {"moles": 1.0}),
     None, "CC=O", 81.0),
    (("ClCCl", {"moles": 1.0}), ("CC", {"moles": 1.0}),
     None, "CCBr", 24.0),
]

LM_CORPUS = [
    "describe <mol>CCO</mol> plainly",
    "name the atoms in <mol>CC</mol> now",
    "count carbons in CCC please",
    "design something new <d:generate>",
    "predict this outcome <d:react>",
    "make a polar solvent <d:generate>",
    "what forms here <d:react>",
    "explain a benzene ring shortly",
    "list two alkanes CC and CCC",
    "compare <mol>CO</mol> with water",
]

PROMPTS = [
    "describe <mol>CCO</mol> briefly",
    "design a small molecule <d:generate>",
    "what do CC and CCO share",
]


def main():
    FIXTURES.mkdir(exist_ok=True)
    for text in MOLECULES:
        assert check_validity(text), text

    (FIXTURES / "molecules.smi").write_text("\n".join(MOLECULES) + "\n")

    pairs = data.make_pair_corpus(MOLECULES)
    (FIXTURES / "pairs.tsv").write_text(
        "".join(f"{s}\t{d}\n" for s, d in pairs))

    records = []
    for (r1, a1), (r2, a2), extra, product, y in REACTIONS:
        molecules = [ReactionMolecule(r1, "reactant", a1),
                     ReactionMolecule(r2, "reactant", a2)]
        if extra is not None:
            molecules.append(ReactionMolecule(extra[0], extra[1], {}))
        molecules.append(ReactionMolecule(product, "product", {}))
        records.append(ReactionRecord(molecules, y))
    products = [rec.molecules[-1].smiles for rec in records]
    assert len(set(products)) == len(products), "products must be distinct"
    data.write_reaction_jsonl(FIXTURES / "reactions.jsonl", records)

    (FIXTURES / "lm_corpus.txt").write_text("\n".join(LM_CORPUS) + "\n")
    (FIXTURES / "prompts.txt").write_text("\n".join(PROMPTS) + "\n")
    print(f"wrote fixtures to {FIXTURES}")


if __name__ == "__main__":
    main()
