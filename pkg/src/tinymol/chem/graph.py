"""Molecular graph model: atoms, bonds, valence, rings, isomorphism.

Bond orders are 1, 2, 3, or the string ``"ar"`` for aromatic bonds.
Hydrogen is never an explicit graph node; it lives in per-atom explicit
counts (bracket atoms) or is implied by the valence table.
"""

from dataclasses import dataclass, field

from ..errors import Error

# Standard valences for the supported element subset.
VALENCE = {"B": 3, "C": 4, "N": 3, "O": 2, "P": 3, "S": 2,
           "F": 1, "Cl": 1, "Br": 1, "I": 1}

AROMATIC_ELEMENTS = {"B", "C", "N", "O", "P", "S"}

AROMATIC = "ar"


class GraphError(Error):
    pass


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    explicit_h: int = 0
    aromatic: bool = False


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: object  # 1 | 2 | 3 | "ar"

    def key(self):
        return (min(self.a, self.b), max(self.a, self.b))

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass
class MolecularGraph:
    atoms: list = field(default_factory=list)
    bonds: list = field(default_factory=list)
    source: str = ""

    def __len__(self):
        return len(self.atoms)

    def neighbors(self, idx: int):
        for bond in self.bonds:
            if bond.a == idx:
                yield bond.b, bond
            elif bond.b == idx:
                yield bond.a, bond

    def degree(self, idx: int) -> int:
        return sum(1 for _ in self.neighbors(idx))

    def validate(self) -> None:
        n = len(self.atoms)
        seen = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise GraphError(f"bond endpoint out of range: {bond}")
            if bond.a == bond.b:
                raise GraphError(f"self-bond on atom {bond.a}")
            if bond.key() in seen:
                raise GraphError(f"duplicate bond {bond.key()}")
            seen.add(bond.key())
            if bond.order == AROMATIC:
                for idx in (bond.a, bond.b):
                    if not self.atoms[idx].aromatic:
                        raise GraphError(
                            f"aromatic bond touching non-aromatic atom {idx}")
        for idx in range(n):
            implicit_hydrogens(self, idx)  # raises GraphError on violation


def _effective_valence(atom: Atom) -> int:
    """Charge-adjusted valence.

    Boron gains capacity with negative charge, carbon loses it with either
    sign, and the more electronegative elements shift with the charge sign.
    """
    base = VALENCE[atom.element]
    if atom.element == "B":
        return base - atom.charge
    if atom.element == "C":
        return base - abs(atom.charge)
    return base + atom.charge


def _order_sum(graph: MolecularGraph, idx: int) -> int:
    # Aromatic bonds count one sigma connection each; the extra pi unit is
    # handled by implicit_hydrogens below.
    total = 0
    for _, bond in graph.neighbors(idx):
        total += 1 if bond.order == AROMATIC else bond.order
    return total


def implicit_hydrogens(graph: MolecularGraph, idx: int) -> int:
    """Implicit hydrogen count for one atom; raises GraphError on violation.

    Organic-subset atoms fill up to the element valence; each aromatic atom
    reserves one valence unit for its pi system when that still leaves a
    nonnegative count. Bracket atoms (explicit H given or charged) never
    gain implicit hydrogens and may sit below the valence ceiling.
    """
    atom = graph.atoms[idx]
    if atom.element not in VALENCE:
        raise GraphError(f"unknown element {atom.element!r}")
    eff = _effective_valence(atom)
    used = _order_sum(graph, idx)
    if atom.explicit_h > 0 or atom.charge != 0:
        if used + atom.explicit_h > eff:
            raise GraphError(
                f"atom {idx} ({atom.element}) exceeds valence {eff}: "
                f"{used} bonds + {atom.explicit_h} H")
        return 0
    if atom.aromatic:
        h = eff - used - 1
        if h < 0:
            h = eff - used
    else:
        h = eff - used
    if h < 0:
        raise GraphError(
            f"atom {idx} ({atom.element}) exceeds valence {eff}: {used} bonds")
    return h


def _bridges(graph: MolecularGraph) -> set:
    """Bond keys that are bridges (removal disconnects the graph)."""
    n = len(graph.atoms)
    adj = [[] for _ in range(n)]
    for bond in graph.bonds:
        adj[bond.a].append(bond.b)
        adj[bond.b].append(bond.a)
    disc = [0] * n
    low = [0] * n
    timer = [1]
    out = set()

    def dfs(root):
        # Iterative Tarjan to keep recursion depth bounded.
        stack = [(root, -1, iter(adj[root]))]
        disc[root] = low[root] = timer[0]
        timer[0] += 1
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for w in it:
                if w == parent:
                    parent = -2  # consume exactly one edge back to parent
                    continue
                if disc[w]:
                    low[v] = min(low[v], disc[w])
                else:
                    disc[w] = low[w] = timer[0]
                    timer[0] += 1
                    stack[-1] = (v, parent, it)
                    stack.append((w, v, iter(adj[w])))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        out.add((min(u, v), max(u, v)))

    for root in range(n):
        if not disc[root]:
            dfs(root)
    return out


def ring_bonds(graph: MolecularGraph) -> set:
    """Bond keys that lie on at least one cycle."""
    bridges = _bridges(graph)
    return {b.key() for b in graph.bonds if b.key() not in bridges}


def ring_atoms(graph: MolecularGraph) -> set:
    atoms = set()
    for a, b in ring_bonds(graph):
        atoms.add(a)
        atoms.add(b)
    return atoms


def _atom_key(atom: Atom):
    return (atom.element, atom.charge, atom.explicit_h, atom.aromatic)


def graphs_isomorphic(g1: MolecularGraph, g2: MolecularGraph) -> bool:
    """Backtracking isomorphism over atom labels and bond orders.

    Fine for molecule-sized graphs; the candidate space is pruned by atom
    key, degree, and incident-bond consistency.
    """
    if len(g1) != len(g2):
        return False
    if sorted(map(_atom_key, g1.atoms)) != sorted(map(_atom_key, g2.atoms)):
        return False
    b1 = {b.key(): b.order for b in g1.bonds}
    b2 = {b.key(): b.order for b in g2.bonds}
    if len(b1) != len(b2):
        return False

    n = len(g1)
    adj1 = [dict() for _ in range(n)]
    adj2 = [dict() for _ in range(n)]
    for b in g1.bonds:
        adj1[b.a][b.b] = b.order
        adj1[b.b][b.a] = b.order
    for b in g2.bonds:
        adj2[b.a][b.b] = b.order
        adj2[b.b][b.a] = b.order

    candidates = [
        [j for j in range(n)
         if _atom_key(g2.atoms[j]) == _atom_key(g1.atoms[i])
         and len(adj2[j]) == len(adj1[i])]
        for i in range(n)
    ]
    order = sorted(range(n), key=lambda i: len(candidates[i]))
    mapping = [-1] * n
    used = [False] * n

    def extend(pos):
        if pos == n:
            return True
        i = order[pos]
        for j in candidates[i]:
            if used[j]:
                continue
            ok = True
            for k, bond_order in adj1[i].items():
                m = mapping[k]
                if m >= 0 and adj2[j].get(m) != bond_order:
                    ok = False
                    break
            if ok:
                mapping[i] = j
                used[j] = True
                if extend(pos + 1):
                    return True
                mapping[i] = -1
                used[j] = False
        return False

    return extend(0)
