"""Path-based fingerprints and Tanimoto similarity.

Every simple bond path of 0..max_path bonds is rendered as an
element/bond-order string, canonicalized to the lexicographically smaller
read direction, and hashed to one bit of a fixed-width vector.
"""

from dataclasses import dataclass

from ..errors import Error
from ..rng import fnv64
from .graph import AROMATIC, MolecularGraph

WIDTH = 2048
MAX_PATH = 7

_BOND_CHAR = {1: "-", 2: "=", 3: "#", AROMATIC: ":"}


class WidthMismatch(Error):
    pass


@dataclass(frozen=True)
class Fingerprint:
    bits: int
    width: int = WIDTH
    max_path: int = MAX_PATH

    def count(self) -> int:
        return self.bits.bit_count()


def _atom_char(graph: MolecularGraph, idx: int) -> str:
    atom = graph.atoms[idx]
    return atom.element.lower() if atom.aromatic else atom.element


def path_string(graph: MolecularGraph, atoms) -> str:
    """Canonical string for one atom path (smaller of both directions)."""
    orders = []
    lookup = {b.key(): b.order for b in graph.bonds}
    for a, b in zip(atoms, atoms[1:]):
        orders.append(lookup[(min(a, b), max(a, b))])

    def render(seq, ords):
        parts = [_atom_char(graph, seq[0])]
        for order, idx in zip(ords, seq[1:]):
            parts.append(_BOND_CHAR[order])
            parts.append(_atom_char(graph, idx))
        return "".join(parts)

    forward = render(atoms, orders)
    backward = render(list(reversed(atoms)), list(reversed(orders)))
    return min(forward, backward)


def string_bit(s: str, width: int = WIDTH) -> int:
    return fnv64(s.encode()) % width


def enumerate_path_strings(graph: MolecularGraph, max_path: int = MAX_PATH) -> set:
    """Canonical strings of all simple paths with at most max_path bonds."""
    n = len(graph.atoms)
    adjacency = [[] for _ in range(n)]
    for bond in graph.bonds:
        adjacency[bond.a].append(bond.b)
        adjacency[bond.b].append(bond.a)
    found = set()

    def extend(path, visited):
        found.add(path_string(graph, path))
        if len(path) - 1 >= max_path:
            return
        for nxt in adjacency[path[-1]]:
            if nxt not in visited:
                path.append(nxt)
                visited.add(nxt)
                extend(path, visited)
                visited.remove(nxt)
                path.pop()

    for start in range(n):
        extend([start], {start})
    return found


def path_fingerprint(graph: MolecularGraph, width: int = WIDTH,
                     max_path: int = MAX_PATH) -> Fingerprint:
    bits = 0
    for s in enumerate_path_strings(graph, max_path):
        bits |= 1 << string_bit(s, width)
    return Fingerprint(bits, width, max_path)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Intersection-over-union of the set bits; 1.0 when both are empty."""
    if a.width != b.width:
        raise WidthMismatch(f"fingerprint widths differ: {a.width} vs {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union
