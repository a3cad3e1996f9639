"""Corpus loaders and toy-corpus generators.

Every loader is total: it yields fully validated records or raises a
line-numbered ParseError; there is no partial silent parse.
"""

import json
from collections import Counter

from .chem import check_validity, parse_smiles
from .errors import Error
from .reaction import AMOUNT_KEYS, ReactionMolecule, ReactionRecord, ROLES
from .rng import Rng

KINDS = ("smiles-lines", "pair-tsv", "reaction-jsonl", "prompts")


class ParseError(Error):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


def load_corpus(path, kind: str):
    if kind not in KINDS:
        raise Error(f"unknown corpus kind {kind!r}; expected one of {KINDS}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    loader = {
        "smiles-lines": _load_smiles_line,
        "pair-tsv": _load_pair_line,
        "reaction-jsonl": _load_reaction_line,
        "prompts": _load_prompt_line,
    }[kind]
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        records.append(loader(number, line))
    return records


def _load_smiles_line(number, line):
    text = line.strip()
    if not check_validity(text):
        raise ParseError(number, f"invalid SMILES {text!r}")
    return text


def _load_pair_line(number, line):
    parts = line.split("\t")
    if len(parts) != 2:
        raise ParseError(number, f"expected 'smiles<TAB>description', got {line!r}")
    smiles, description = parts[0].strip(), parts[1].strip()
    if not check_validity(smiles):
        raise ParseError(number, f"invalid SMILES {smiles!r}")
    if not description:
        raise ParseError(number, "empty description")
    return smiles, description


def _load_prompt_line(number, line):
    return line.rstrip("\n")


_RECORD_KEYS = {"molecules", "yield_percent"}
_MOLECULE_KEYS = {"smiles", "role", "amount"}


def _load_reaction_line(number, line):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(number, f"bad JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ParseError(number, "record must be a JSON object")
    unknown = set(obj) - _RECORD_KEYS
    if unknown:
        raise ParseError(number, f"unknown keys {sorted(unknown)}")
    if "molecules" not in obj or not isinstance(obj["molecules"], list):
        raise ParseError(number, "record needs a 'molecules' list")
    molecules = []
    for i, entry in enumerate(obj["molecules"]):
        if not isinstance(entry, dict):
            raise ParseError(number, f"molecule {i} must be an object")
        unknown = set(entry) - _MOLECULE_KEYS
        if unknown:
            raise ParseError(number, f"molecule {i}: unknown keys {sorted(unknown)}")
        smiles = entry.get("smiles")
        role = entry.get("role")
        if not isinstance(smiles, str) or not check_validity(smiles):
            raise ParseError(number, f"molecule {i}: invalid SMILES {smiles!r}")
        if role not in ROLES:
            raise ParseError(number, f"molecule {i}: unknown role {role!r}")
        amounts = entry.get("amount", {})
        if not isinstance(amounts, dict):
            raise ParseError(number, f"molecule {i}: 'amount' must be an object")
        for key, value in amounts.items():
            if key not in AMOUNT_KEYS:
                raise ParseError(number, f"molecule {i}: unknown amount key {key!r}")
            if not isinstance(value, (int, float)):
                raise ParseError(number, f"molecule {i}: amount {key} must be numeric")
        molecules.append(ReactionMolecule(smiles, role, dict(amounts)))
    yield_percent = obj.get("yield_percent")
    if yield_percent is not None and not isinstance(yield_percent, (int, float)):
        raise ParseError(number, "yield_percent must be numeric")
    try:
        return ReactionRecord(molecules, yield_percent)
    except Error as exc:
        raise ParseError(number, str(exc)) from None


def write_reaction_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            obj = {"molecules": [
                {"smiles": m.smiles, "role": m.role,
                 **({"amount": m.amounts} if m.amounts else {})}
                for m in record.molecules]}
            if record.yield_percent is not None:
                obj["yield_percent"] = record.yield_percent
            fh.write(json.dumps(obj) + "\n")


_NUMBER_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven",
                 "eight", "nine", "ten", "eleven", "twelve")
_ELEMENT_NAMES = {"B": "boron", "C": "carbon", "N": "nitrogen", "O": "oxygen",
                  "P": "phosphorus", "S": "sulfur", "F": "fluorine",
                  "Cl": "chlorine", "Br": "bromine", "I": "iodine"}


def _count_word(n: int) -> str:
    return _NUMBER_WORDS[n] if n < len(_NUMBER_WORDS) else str(n)


def caption_molecule(smiles: str) -> str:
    """Deterministic templated description of a molecule's composition."""
    graph = parse_smiles(smiles)
    counts = Counter(a.element for a in graph.atoms)
    pieces = []
    for element in sorted(counts):
        n = counts[element]
        name = _ELEMENT_NAMES[element]
        pieces.append(f"{_count_word(n)} {name}" + ("s" if n > 1 else ""))
    body = ", ".join(pieces)
    aromatic = any(a.aromatic for a in graph.atoms)
    orders = Counter(b.order for b in graph.bonds)
    traits = []
    if aromatic:
        traits.append("an aromatic ring")
    if orders.get(3):
        traits.append("a triple bond")
    elif orders.get(2):
        traits.append(f"{_count_word(orders[2])} double bond"
                      + ("s" if orders[2] > 1 else ""))
    if not aromatic and len(graph.atoms) > 2:
        if any(graph.degree(i) >= 3 for i in range(len(graph.atoms))):
            traits.append("a branched skeleton")
        else:
            traits.append("an unbranched skeleton")
    for element in ("N", "O"):
        placements = {("terminal" if graph.degree(i) <= 1 else "inner")
                      for i, a in enumerate(graph.atoms)
                      if a.element == element and not a.aromatic}
        for place in sorted(placements):
            traits.append(f"{place} {_ELEMENT_NAMES[element]}")
    trait = " with " + " and ".join(traits) if traits else ""
    return f"a molecule of {body}{trait}"


def make_pair_corpus(smiles_list) -> list:
    return [(s, caption_molecule(s)) for s in smiles_list]


def synthetic_linear_yield(rng: Rng, n: int, products=None) -> list:
    """Reactions whose yield is a clipped linear function of the amounts.

    The generating weights are fixed so a trained model can be scored
    against the known function on held-out draws.
    """
    products = products or ["CCOC(C)=O", "COC(C)=O", "CCOCC", "CCN", "CCCl"]
    reactant_pool = ["CCO", "CO", "CCN", "CCC", "CCBr"]
    records = []
    for i in range(n):
        moles_a = float(rng.uniform(low=0.2, high=1.8))
        moles_b = float(rng.uniform(low=0.2, high=1.8))
        equivalents = float(rng.uniform(low=0.5, high=2.0))
        y01 = 0.15 + 0.20 * moles_a + 0.15 * moles_b + 0.10 * equivalents
        y01 = min(max(y01, 0.0), 1.0)
        mols = [
            ReactionMolecule(reactant_pool[i % len(reactant_pool)], "reactant",
                             {"moles": round(moles_a, 4)}),
            ReactionMolecule(reactant_pool[(i + 1) % len(reactant_pool)], "reactant",
                             {"moles": round(moles_b, 4),
                              "equivalents": round(equivalents, 4)}),
            ReactionMolecule(products[i % len(products)], "product", {}),
        ]
        records.append(ReactionRecord(mols, round(y01 * 100.0, 4)))
    return records
