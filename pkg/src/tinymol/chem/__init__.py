"""Molecular graphs: SMILES parsing/writing, 3D layout, fingerprints."""

from .graph import (
    Atom,
    Bond,
    MolecularGraph,
    GraphError,
    VALENCE,
    graphs_isomorphic,
    implicit_hydrogens,
    ring_atoms,
    ring_bonds,
)
from .smiles import (
    ParseOffsetError,
    UnbalancedParenthesis,
    UnclosedRing,
    UnknownAtomSymbol,
    ValenceViolation,
    check_validity,
    parse_smiles,
    write_smiles,
)
from .conformer import Conformer, assign_conformer
from .fingerprint import (
    Fingerprint,
    WidthMismatch,
    path_fingerprint,
    path_string,
    string_bit,
    tanimoto,
)

__all__ = [
    "Atom",
    "Bond",
    "MolecularGraph",
    "GraphError",
    "VALENCE",
    "graphs_isomorphic",
    "implicit_hydrogens",
    "ring_atoms",
    "ring_bonds",
    "ParseOffsetError",
    "UnbalancedParenthesis",
    "UnclosedRing",
    "UnknownAtomSymbol",
    "ValenceViolation",
    "check_validity",
    "parse_smiles",
    "write_smiles",
    "Conformer",
    "assign_conformer",
    "Fingerprint",
    "WidthMismatch",
    "path_fingerprint",
    "path_string",
    "string_bit",
    "tanimoto",
]
