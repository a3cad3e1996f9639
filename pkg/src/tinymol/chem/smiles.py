"""SMILES subset parser and writer.

Grammar: element symbols B C N O P S F Cl Br I, aromatic b c n o p s,
bond symbols ``- = #``, branches ``( )``, ring closures ``1``-``9`` and
``%nn``, bracket atoms ``[<symbol><H count><charge>]``. No stereo
markers, isotopes, or dot-disconnects.

A bond written without a symbol between two aromatic atoms is aromatic
when it lies on a ring and single otherwise; every aromatic atom must end
up inside an aromatic ring.
"""

from ..errors import Error
from .graph import (
    AROMATIC,
    AROMATIC_ELEMENTS,
    Atom,
    Bond,
    GraphError,
    MolecularGraph,
    VALENCE,
    implicit_hydrogens,
    ring_bonds,
)

ORGANIC_UPPER = {"B", "C", "N", "O", "P", "S", "F", "I"}
ORGANIC_TWO = {"Cl", "Br"}
AROMATIC_LOWER = {"b", "c", "n", "o", "p", "s"}
BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3}


class ParseOffsetError(Error):
    """Parse failure anchored at a character offset of the input."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class UnbalancedParenthesis(ParseOffsetError):
    pass


class UnclosedRing(ParseOffsetError):
    pass


class UnknownAtomSymbol(ParseOffsetError):
    pass


class ValenceViolation(ParseOffsetError):
    pass


def _parse_bracket(text: str, start: int):
    """Parse ``[...]`` starting at ``start``; returns (Atom, end offset)."""
    pos = start + 1
    n = len(text)
    if pos >= n:
        raise UnknownAtomSymbol("unterminated bracket atom", start)
    if text[pos:pos + 2] in ORGANIC_TWO:
        symbol, aromatic = text[pos:pos + 2], False
        pos += 2
    elif text[pos] in ORGANIC_UPPER:
        symbol, aromatic = text[pos], False
        pos += 1
    elif text[pos] in AROMATIC_LOWER:
        symbol, aromatic = text[pos].upper(), True
        pos += 1
    else:
        raise UnknownAtomSymbol(f"unknown atom symbol {text[pos]!r}", pos)
    hcount = 0
    if pos < n and text[pos] == "H":
        pos += 1
        digits = ""
        while pos < n and text[pos].isdigit():
            digits += text[pos]
            pos += 1
        hcount = int(digits) if digits else 1
    charge = 0
    if pos < n and text[pos] in "+-":
        sign = 1 if text[pos] == "+" else -1
        symbol_char = text[pos]
        pos += 1
        digits = ""
        while pos < n and text[pos].isdigit():
            digits += text[pos]
            pos += 1
        if digits:
            charge = sign * int(digits)
        else:
            charge = sign
            while pos < n and text[pos] == symbol_char:
                charge += sign
                pos += 1
    if pos >= n or text[pos] != "]":
        raise UnknownAtomSymbol("expected ']' in bracket atom", pos if pos < n else n - 1)
    return Atom(symbol, charge, hcount, aromatic), pos + 1


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a validated MolecularGraph.

    Raises UnbalancedParenthesis, UnclosedRing, UnknownAtomSymbol, or
    ValenceViolation, each carrying the offending character offset.
    """
    if not text:
        raise UnknownAtomSymbol("empty SMILES", 0)
    if not text.isascii():
        raise UnknownAtomSymbol("SMILES must be ASCII", 0)

    graph = MolecularGraph(source=text)
    offsets = []          # source offset per atom, for error reporting
    branch_stack = []     # (attachment atom, '(' offset)
    current = None
    pending = None        # (order, offset) of an explicit bond symbol
    rings = {}            # digit -> (atom index, pending order or None, offset)
    bond_keys = set()

    def add_bond(a, b, order, offset):
        key = (min(a, b), max(a, b))
        if a == b:
            raise UnclosedRing("ring bond closes onto its own atom", offset)
        if key in bond_keys:
            raise UnclosedRing("duplicate bond via ring closure", offset)
        bond_keys.add(key)
        graph.bonds.append(Bond(a, b, order))

    def attach(atom: Atom, offset: int):
        nonlocal current, pending
        graph.atoms.append(atom)
        offsets.append(offset)
        idx = len(graph.atoms) - 1
        if current is not None:
            if pending is not None:
                order = pending[0]
            elif graph.atoms[current].aromatic and atom.aromatic:
                order = AROMATIC
            else:
                order = 1
            add_bond(current, idx, order, offset)
        elif pending is not None:
            raise UnknownAtomSymbol("bond symbol has no preceding atom", pending[1])
        current = idx
        pending = None

    def close_ring(digit: str, offset: int):
        nonlocal pending
        if current is None:
            raise UnclosedRing("ring closure before any atom", offset)
        if digit in rings:
            other, open_order, open_offset = rings.pop(digit)
            order = None
            for cand in (open_order, pending[0] if pending else None):
                if cand is None:
                    continue
                if order is not None and order != cand:
                    raise UnclosedRing("conflicting ring-bond orders", offset)
                order = cand
            if order is None:
                both_aromatic = graph.atoms[other].aromatic and graph.atoms[current].aromatic
                order = AROMATIC if both_aromatic else 1
            add_bond(other, current, order, offset)
        else:
            rings[digit] = (current, pending[0] if pending else None, offset)
        pending = None

    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == "(":
            if current is None:
                raise UnbalancedParenthesis("branch opened before any atom", pos)
            branch_stack.append((current, pos))
            pos += 1
        elif ch == ")":
            if pending is not None:
                raise UnknownAtomSymbol("expected atom after bond symbol", pos)
            if not branch_stack:
                raise UnbalancedParenthesis("unmatched ')'", pos)
            current, _ = branch_stack.pop()
            pos += 1
        elif ch in BOND_SYMBOLS:
            if pending is not None:
                raise UnknownAtomSymbol("expected atom after bond symbol", pos)
            pending = (BOND_SYMBOLS[ch], pos)
            pos += 1
        elif ch.isdigit() and ch != "0":
            close_ring(ch, pos)
            pos += 1
        elif ch == "%":
            if pos + 2 >= n or not (text[pos + 1].isdigit() and text[pos + 2].isdigit()):
                raise UnclosedRing("'%' ring closure needs two digits", pos)
            close_ring(text[pos + 1:pos + 3], pos)
            pos += 3
        elif ch == "[":
            atom, end = _parse_bracket(text, pos)
            attach(atom, pos)
            pos = end
        elif text[pos:pos + 2] in ORGANIC_TWO:
            attach(Atom(text[pos:pos + 2]), pos)
            pos += 2
        elif ch in ORGANIC_UPPER:
            attach(Atom(ch), pos)
            pos += 1
        elif ch in AROMATIC_LOWER:
            attach(Atom(ch.upper(), aromatic=True), pos)
            pos += 1
        else:
            raise UnknownAtomSymbol(f"unexpected character {ch!r}", pos)

    if branch_stack:
        raise UnbalancedParenthesis("unclosed '('", branch_stack[-1][1])
    if rings:
        first = min(rings.values(), key=lambda entry: entry[2])
        raise UnclosedRing("unclosed ring bond", first[2])
    if pending is not None:
        raise UnknownAtomSymbol("expected atom after bond symbol", pending[1])

    _resolve_aromaticity(graph, offsets)
    for idx in range(len(graph.atoms)):
        try:
            implicit_hydrogens(graph, idx)
        except GraphError as exc:
            raise ValenceViolation(str(exc), offsets[idx]) from None
    return graph


def _resolve_aromaticity(graph: MolecularGraph, offsets) -> None:
    """Demote out-of-ring aromatic bonds to single; require aromatic rings.

    A bare bond between two aromatic atoms is aromatic only inside a ring
    (so biphenyl-style links come out single), and every aromatic atom must
    carry at least two aromatic bonds.
    """
    in_ring = ring_bonds(graph)
    for i, bond in enumerate(graph.bonds):
        if bond.order == AROMATIC and bond.key() not in in_ring:
            graph.bonds[i] = Bond(bond.a, bond.b, 1)
    counts = [0] * len(graph.atoms)
    for bond in graph.bonds:
        if bond.order == AROMATIC:
            counts[bond.a] += 1
            counts[bond.b] += 1
    for idx, atom in enumerate(graph.atoms):
        if atom.aromatic:
            if atom.element not in AROMATIC_ELEMENTS or counts[idx] < 2:
                raise ValenceViolation(
                    f"aromatic atom {idx} is not part of an aromatic ring", offsets[idx])


def check_validity(text: str) -> bool:
    """True iff the text parses as SMILES, valence checks included."""
    try:
        parse_smiles(text)
        return True
    except Error:
        return False


def _atom_token(atom: Atom) -> str:
    symbol = atom.element.lower() if atom.aromatic else atom.element
    if atom.charge == 0 and atom.explicit_h == 0:
        return symbol
    h = ""
    if atom.explicit_h:
        h = "H" if atom.explicit_h == 1 else f"H{atom.explicit_h}"
    q = ""
    if atom.charge:
        sign = "+" if atom.charge > 0 else "-"
        q = sign if abs(atom.charge) == 1 else f"{sign}{abs(atom.charge)}"
    return f"[{symbol}{h}{q}]"


def _bond_token(graph: MolecularGraph, bond: Bond) -> str:
    if bond.order == 2:
        return "="
    if bond.order == 3:
        return "#"
    if bond.order == AROMATIC:
        return ""
    if graph.atoms[bond.a].aromatic and graph.atoms[bond.b].aromatic:
        return "-"  # single bond between aromatic atoms must be explicit
    return ""


def _ring_digit(number: int) -> str:
    return str(number) if number <= 9 else f"%{number:02d}"


def write_smiles(graph: MolecularGraph) -> str:
    """Serialize a graph; re-parsing yields an isomorphic graph.

    The graph must be connected (the parser only produces connected
    graphs; there is no dot-disconnect in the grammar).
    """
    graph.validate()
    n = len(graph.atoms)
    if n == 0:
        raise GraphError("cannot write an empty graph")

    adjacency = [[] for _ in range(n)]
    for bond in graph.bonds:
        adjacency[bond.a].append(bond)
        adjacency[bond.b].append(bond)

    visited = [False] * n
    tree_children = [[] for _ in range(n)]   # (child, bond)
    ring_open = [[] for _ in range(n)]       # (digit string, bond) at opener
    ring_close = [[] for _ in range(n)]      # digit string at closer
    seen_bonds = set()
    next_ring = 1

    stack = [(0, None)]
    order_visited = []
    visited[0] = True
    while stack:
        v, _ = stack.pop()
        order_visited.append(v)
        for bond in adjacency[v]:
            w = bond.other(v)
            if id(bond) in seen_bonds:
                continue
            if visited[w]:
                seen_bonds.add(id(bond))
                digit = _ring_digit(next_ring)
                next_ring += 1
                ring_open[v].append((digit, bond))
                ring_close[w].append(digit)
            else:
                seen_bonds.add(id(bond))
                visited[w] = True
                tree_children[v].append((w, bond))
                stack.append((w, bond))
    if not all(visited):
        raise GraphError("write_smiles requires a connected graph")

    # ring_close entries were assigned while walking; the closer is the
    # atom visited earlier, so emit its digit without a bond symbol and
    # put any explicit symbol on the opener side.
    def emit(v: int, in_bond) -> str:
        parts = []
        if in_bond is not None:
            parts.append(_bond_token(graph, in_bond))
        parts.append(_atom_token(graph.atoms[v]))
        for digit in ring_close[v]:
            parts.append(digit)
        for digit, bond in ring_open[v]:
            parts.append(_bond_token(graph, bond) + digit)
        children = tree_children[v]
        for child, bond in children[:-1]:
            parts.append("(" + emit(child, bond) + ")")
        if children:
            child, bond = children[-1]
            parts.append(emit(child, bond))
        return "".join(parts)

    return emit(0, None)
